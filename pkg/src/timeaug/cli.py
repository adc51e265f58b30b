"""Command line entry point: ``timeaug <subcommand> ...``.

Artifacts live under ``<output root>/<run_id>/``; the output root is the
``--output`` flag, else ``$TIMEAUG_OUTPUT``, else ``output_dir`` from the
config. Failures print one JSON error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, config_from_dict, config_to_dict, dumps, parse_config
from .corpus import LayoutError, load_index, save_index
from .evaluate import EvalReport
from .pairsampler import PairBuffer, build_buffer, build_toybox_pairs
from .stats import format_mean_sd, summarize, ttest_independent
from .synthworld import export_episode, generate_episode, make_world
from .train import TrainingDiverged, load_learner, write_trace

ENV_OUTPUT = "TIMEAUG_OUTPUT"
EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 2, 3, 4, 5


class MissingArtifact(RuntimeError):
    def __init__(self, what: str, path, subcommand: str):
        super().__init__(f"{what} not found at {path}; run `timeaug {subcommand}` first")
        self.subcommand = subcommand


# -- helpers -----------------------------------------------------------------------

def output_root(cfg: ExperimentConfig, flag: str | None) -> Path:
    return Path(flag or os.environ.get(ENV_OUTPUT) or cfg.output_dir)


def run_dir(cfg: ExperimentConfig, flag: str | None) -> Path:
    d = output_root(cfg, flag) / cfg.run_id
    d.mkdir(parents=True, exist_ok=True)
    return d


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def code_version() -> str:
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for f in sorted(root.rglob("*.py")):
        h.update(f.relative_to(root).as_posix().encode())
        h.update(f.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_values(path) -> list:
    """Accuracies from a file: one number per line, or a CSV with an ``accuracy`` column."""
    text = Path(path).read_text()
    lines = [l for l in text.splitlines() if l.strip()]
    if lines and "accuracy" in lines[0].split(","):
        return [float(r["accuracy"]) for r in csv.DictReader(lines)]
    return [float(tok) for l in lines for tok in l.replace(",", " ").split()]


def _index_path(d: Path) -> Path:
    return d / "index.jsonl"


def _buffer_path(d: Path, seed: int) -> Path:
    return d / f"buffer_seed_{seed}.jsonl"


def _needs_index(cfg: ExperimentConfig) -> bool:
    return cfg.train.source in ("buffer", "toybox")


def _require_index(cfg: ExperimentConfig, d: Path):
    p = _index_path(d)
    if not p.exists():
        raise MissingArtifact("dataset index", p, "index")
    return load_index(p)


# -- subcommands -------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, args) -> dict:
    d = run_dir(cfg, args.output) / "episodes"
    world = make_world(cfg.world, cfg.world_seed)
    cfg_e = cfg.effective()
    written = []
    for k in range(args.episodes):
        frames = generate_episode(world, cfg_e.interaction, [cfg.seeds[0], k], args.length)
        written.append(str(export_episode(frames, d / f"episode_{k:04d}", episode_id=k)))
    merged = d / "metadata.jsonl"
    with merged.open("w") as fh:
        for k, ep in enumerate(written):
            for line in (Path(ep) / "metadata.jsonl").read_text().splitlines():
                rec = json.loads(line)
                rec["path"] = f"episode_{k:04d}/{rec['path']}"
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (d / "world.json").write_text(json.dumps(world.to_dict(), sort_keys=True))
    return {"episodes": len(written), "directory": str(d)}


def cmd_index(cfg: ExperimentConfig, args) -> dict:
    from .experiments import load_corpus_index

    d = run_dir(cfg, args.output)
    index = load_corpus_index(cfg)
    save_index(index, _index_path(d))
    return {"records": len(index), "objects": len(index.objects()), "index": str(_index_path(d))}


def _train_positions(cfg: ExperimentConfig, index, seed: int):
    """Training view of the index and, per train record, its position in the full index."""
    from .corpus import SplitSpec, make_splits

    train_view = make_splits(index, SplitSpec(validation_stride=cfg.corpus.validation_stride,
                                              toybox_train_fraction=cfg.corpus.toybox_train_fraction),
                             seed=seed).train
    full_pos = {id(r): i for i, r in enumerate(index.records)}
    return train_view, [full_pos[id(r)] for r in train_view.records]


def _load_buffer(cfg: ExperimentConfig, index, d: Path, seed: int) -> PairBuffer | None:
    """The dumped buffer for ``seed`` in training-view positions, if build-buffer ran."""
    path = _buffer_path(d, seed)
    if not path.exists():
        return None
    _, remap = _train_positions(cfg, index, seed)
    back = {full: k for k, full in enumerate(remap)}
    dumped = PairBuffer.load(path)
    try:
        pairs = [(back[a], back[b]) for a, b in dumped.pairs]
    except KeyError as exc:
        raise ValueError(f"{path} references frame {exc} outside the training split; rerun build-buffer") from None
    return PairBuffer(pairs, dumped.kinds, total_views=dumped.total_views)


def cmd_build_buffer(cfg: ExperimentConfig, args) -> dict:
    d = run_dir(cfg, args.output)
    index = _require_index(cfg, d)
    out = {}
    for seed in cfg.seeds:
        train_view, remap = _train_positions(cfg, index, seed)
        if cfg.train.source == "toybox":
            buf = build_toybox_pairs(train_view, seed=seed, exclude=cfg.corpus.exclude_transformations)
        else:
            buf = build_buffer(train_view, replace(cfg.sampler, seed=seed))
        # refer to positions of the full index so the dump is self-contained
        PairBuffer([(remap[a], remap[b]) for a, b in buf.pairs], buf.kinds, buf.cycle_boundaries,
                   buf.total_views).dump(_buffer_path(d, seed))
        out[str(seed)] = {"pairs": len(buf), "path": str(_buffer_path(d, seed))}
    return out


def _train_one(cfg: ExperimentConfig, seed: int, d: Path, index, world, eval_images) -> dict:
    from .experiments import run_seed

    sd = d / f"seed_{seed}"
    sd.mkdir(parents=True, exist_ok=True)
    ckpt = sd / "checkpoint.bin"
    buffer = _load_buffer(cfg, index, d, seed) if index is not None else None
    out = run_seed(cfg, seed, checkpoint_path=ckpt, index=index, world=world, eval_images=eval_images,
                   buffer=buffer)
    write_trace(out.result.trace, sd / "trace.csv")
    entry = {"checkpoint": str(ckpt), "trace": str(sd / "trace.csv"), "steps": out.result.steps,
             "buffer": str(_buffer_path(d, seed)) if buffer is not None else None,
             "seconds": round(out.seconds, 3), "checkpoint_sha256": _sha256(ckpt)}
    if out.report is not None:
        out.report.write_csv(sd / "report.csv")
        out.report.write_summary(sd / "summary.json")
        entry["report"] = str(sd / "report.csv")
        entry["report_sha256"] = _sha256(sd / "report.csv")
    return entry


def write_manifest(cfg: ExperimentConfig, d: Path, seeds: dict, started: float) -> Path:
    manifest = {
        "config": config_to_dict(cfg),
        "code_version": code_version(),
        "seeds": seeds,
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    path = d / "manifest.json"
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def cmd_train(cfg: ExperimentConfig, args) -> dict:
    from .experiments import synth_eval_images

    started = time.time()
    d = run_dir(cfg, args.output)
    _atomic_write(d / "config.resolved.toml", dumps(cfg))
    index = _require_index(cfg, d) if _needs_index(cfg) else None
    world = eval_images = None
    eff = cfg.effective()
    if not _needs_index(cfg):
        world = make_world(eff.world, eff.world_seed)
        eval_images = synth_eval_images(world, eff.eval) if eff.eval.enabled else None
    seeds = {}
    for seed in cfg.seeds:
        seeds[str(seed)] = _train_one(cfg, seed, d, index, world, eval_images)
    path = write_manifest(cfg, d, seeds, started)
    return {"run_dir": str(d), "manifest": str(path), "seeds": list(cfg.seeds)}


def cmd_probe(cfg: ExperimentConfig, args) -> dict:
    from .experiments import probe_learner

    d = run_dir(cfg, args.output)
    index = _require_index(cfg, d) if _needs_index(cfg) else None
    eff = cfg.effective()
    out = {}
    for seed in cfg.seeds:
        ckpt = d / f"seed_{seed}" / "checkpoint.bin"
        if not ckpt.exists():
            raise MissingArtifact("checkpoint", ckpt, "train")
        learner, _ = load_learner(ckpt, eff.encoder, eff.loss.objective)
        report = probe_learner(cfg, learner.encoder, seed, index=index)
        report.write_csv(d / f"seed_{seed}" / "report.csv")
        report.write_summary(d / f"seed_{seed}" / "summary.json")
        out[str(seed)] = report.rows
    return out


def aggregate(reports: list) -> list:
    """One row per (protocol, target, split) with mean, SD, SE and a formatted cell."""
    groups: dict = {}
    for rep in reports:
        for r in rep.rows:
            groups.setdefault((r["protocol"], r["target"], r["split"]), []).append(r["accuracy"])
    rows = []
    for (p, t, s), vals in sorted(groups.items()):
        stats = summarize(vals)
        rows.append({"protocol": p, "target": t, "split": s, "n": stats["n"], "mean": stats["mean"],
                     "sd": stats["sd"], "se": stats["se"], "formatted": format_mean_sd(vals)})
    return rows


def _write_rows(path: Path, rows: list, columns) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})


def cmd_report(cfg: ExperimentConfig, args) -> dict:
    d = run_dir(cfg, args.output)
    reports, all_rows = [], []
    for seed in cfg.seeds:
        p = d / f"seed_{seed}" / "report.csv"
        if not p.exists():
            raise MissingArtifact("per-seed report", p, "train")
        rep = EvalReport.read_csv(p)
        reports.append(rep)
        all_rows.extend(rep.rows)
    _write_rows(d / "report.csv", all_rows, ("protocol", "target", "split", "seed", "accuracy"))
    table = aggregate(reports)
    _write_rows(d / "table.csv", table, ("protocol", "target", "split", "n", "mean", "sd", "se", "formatted"))
    return {"table": table, "path": str(d / "table.csv")}


def cmd_ttest(args) -> dict:
    a, b = _load_values(args.a), _load_values(args.b)
    res = ttest_independent(a, b)
    row = res.row()
    if args.csv:
        with Path(args.csv).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            w.writeheader()
            w.writerow(row)
    return row


def _grid_points(grid: dict) -> list:
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"[sweep] grid entry '{k}' must be a non-empty array")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _point_name(point: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in point.items())


def _sweep_job(raw: dict, seed: int, root: str):
    cfg = config_from_dict(raw)
    cfg = replace(cfg, seeds=(seed,))
    d = Path(root) / cfg.run_id
    d.mkdir(parents=True, exist_ok=True)
    index = _require_index(cfg, d) if _needs_index(cfg) else None
    return _train_one(cfg, seed, d, index, None, None)


def cmd_sweep(cfg: ExperimentConfig, args, raw: dict) -> dict:
    from .config import set_dotted

    d = run_dir(cfg, args.output)
    points = _grid_points(cfg.sweep.grid)
    jobs = []
    for point in points:
        point_raw = dict(raw)
        point_raw.pop("sweep", None)
        for k, v in point.items():
            point_raw = set_dotted(point_raw, k, v)
        point_raw["run_id"] = _point_name(point)
        config_from_dict(point_raw)  # validate early
        for seed in cfg.seeds:
            jobs.append((point, point_raw, seed))
    workers = args.jobs or cfg.sweep.jobs
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            entries = list(pool.map(_sweep_job, [j[1] for j in jobs], [j[2] for j in jobs],
                                    [str(d)] * len(jobs)))
    else:
        entries = [_sweep_job(r, s, str(d)) for _, r, s in jobs]
    rows, columns = [], list(sorted(cfg.sweep.grid)) + ["seed"]
    for (point, point_raw, seed), entry in zip(jobs, entries):
        row = dict(point, seed=seed)
        if "report" in entry:
            for r in EvalReport.read_csv(entry["report"]).rows:
                col = f"{r['protocol']}/{r['target']}/{r['split']}"
                row[col] = r["accuracy"]
                if col not in columns:
                    columns.append(col)
        rows.append(row)
    with (d / "sweep.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return {"runs": len(rows), "path": str(d / "sweep.csv")}


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="timeaug", description="Time-based augmentation experiments")
    p.add_argument("--version", action="version", version=f"timeaug {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="TOML experiment file or a run manifest.json")
        sp.add_argument("--output", help="output root (overrides $TIMEAUG_OUTPUT and output_dir)")
        return sp

    sp = with_config("simulate", "export synthetic interaction episodes as PNG + metadata")
    sp.add_argument("--episodes", type=int, default=1)
    sp.add_argument("--length", type=int, default=None)
    with_config("index", "index a dataset directory into index.jsonl")
    with_config("build-buffer", "build and dump the pair buffer for each seed")
    with_config("train", "train every seed; writes checkpoints, traces, reports and a manifest")
    with_config("probe", "re-run linear probes on trained checkpoints")
    with_config("report", "aggregate per-seed reports into mean ± sd tables")
    sp = with_config("sweep", "train over the cartesian product of [sweep] grid values")
    sp.add_argument("--jobs", type=int, default=0, help="parallel runs (default: [sweep] jobs)")
    sp = sub.add_parser("ttest", help="pooled two-sample t-test between two accuracy files")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--csv", help="write the result row to this CSV file")
    return p


def _raw_config(path) -> dict:
    import tomli

    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        return data.get("config", data)
    return tomli.loads(path.read_text())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "ttest":
            result = cmd_ttest(args)
        else:
            cfg = parse_config(args.config)
            handlers = {"simulate": cmd_simulate, "index": cmd_index, "build-buffer": cmd_build_buffer,
                        "train": cmd_train, "probe": cmd_probe, "report": cmd_report}
            if args.command == "sweep":
                result = cmd_sweep(cfg, args, _raw_config(args.config))
            else:
                result = handlers[args.command](cfg, args)
    except ConfigError as exc:
        return _fail("config_error", str(exc), EXIT_CONFIG)
    except MissingArtifact as exc:
        return _fail("missing_artifact", str(exc), EXIT_MISSING, requires=exc.subcommand)
    except TrainingDiverged as exc:
        return _fail("training_diverged", str(exc), EXIT_RUNTIME, step=exc.step)
    except (LayoutError, ValueError, KeyError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    print(json.dumps({"status": "ok", "command": args.command, "result": result}, sort_keys=True,
                     default=_json_default))
    return 0


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"status": "error", "error": kind, "message": message, **extra}, sort_keys=True),
          file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
