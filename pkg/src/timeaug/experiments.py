"""End-to-end runs: build a pair source, train, and probe the frozen encoder."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugConfig
from .config import EvalConfig, ExperimentConfig
from .corpus import DatasetIndex, SplitSpec, index_dataset, index_frames, load_index, make_splits
from .evaluate import (EvalReport, EvalSets, FeatureTable, ProbeConfig, evaluate_protocol, extract_features,
                       fit_linear_probe)
from .pairsampler import PairBuffer, PairPolicy, build_buffer, build_toybox_pairs
from .synthworld import D_NOMINAL, DIST_MAX, DIST_MIN, InteractionStream, World, make_world, render_batch
from .train import BufferSource, StreamSource, TrainResult, build_learner, train


# -- synthetic evaluation sets ---------------------------------------------------

@dataclass
class ImageSet:
    images: np.ndarray
    labels: dict

    def table(self, encoder) -> FeatureTable:
        return extract_features(encoder, self.images, self.labels)


def render_set(world: World, object_ids, views: int, rng, backgrounds, orientation=None,
               distance: str = "uniform") -> ImageSet:
    """``views`` renders per object at random (or fixed) orientation.

    Distance is uniform over the legal range, or fixed at the pickup distance
    with ``distance="nominal"``.
    """
    objs = np.repeat(np.asarray(object_ids, dtype=int), views)
    m = len(objs)
    angles = rng.uniform(0.0, 360.0, m) if orientation is None else np.full(m, float(orientation))
    dists = rng.uniform(DIST_MIN, DIST_MAX, m)
    if distance == "nominal":
        dists = np.full(m, D_NOMINAL)
    bgs = np.asarray(backgrounds)[rng.integers(0, len(backgrounds), m)]
    images = render_batch(world, objs, angles, dists, bgs)
    labels = {
        "object_id": objs,
        "category_id": np.array([world.objects[o].category_id for o in objs]),
        "background_id": bgs,
        "session_id": bgs,
        "orientation_deg": angles % 360.0,
    }
    return ImageSet(images, labels)


def synth_eval_images(world: World, cfg: EvalConfig) -> dict:
    """Image sets for every probe the config asks for, drawn with the eval seed.

    ``category``: train objects vs held-out test objects. ``object``: two
    independent view sets of the train objects. ``background``: train-object
    views, split into two independent draws. Held-out backgrounds (when the
    world has them) give a category test set in unseen surroundings.
    """
    rng = np.random.default_rng([cfg.seed, 0xE7A1])
    n, dist = cfg.views_per_object, cfg.distance
    bgs = world.train_background_ids
    out = {
        "train": render_set(world, world.train_object_ids, n, rng, bgs, distance=dist),
        "test": render_set(world, world.test_object_ids, n, rng, bgs, distance=dist),
    }
    if "object" in cfg.targets:
        out["object_test"] = render_set(world, world.train_object_ids, n, rng, bgs, distance=dist)
    if "background" in cfg.targets or "session" in cfg.targets:
        out["background_test"] = render_set(world, world.train_object_ids, n, rng, bgs, distance=dist)
    if cfg.heldout_backgrounds and world.heldout_background_ids:
        out["test_heldout_bg"] = render_set(world, world.test_object_ids, n, rng, world.heldout_background_ids,
                                            distance=dist)
    if set(cfg.protocols) - {"standard"}:
        for a in cfg.orientations:
            out[f"train@{a:g}"] = render_set(world, world.train_object_ids, 1, rng, bgs, a, dist)
            out[f"test@{a:g}"] = render_set(world, world.test_object_ids, 1, rng, bgs, a, dist)
    return out


def _probe_cfg(cfg: EvalConfig, target: str) -> ProbeConfig:
    return ProbeConfig(target=target, epochs=cfg.probe_epochs, lr=cfg.probe_lr, l2=cfg.probe_l2, seed=cfg.seed)


def evaluate_synth(encoder, images: dict, cfg: EvalConfig, seed: int) -> EvalReport:
    """Probe an encoder on the synthetic sets; one report row per measurement."""
    tables = {k: v.table(encoder) for k, v in images.items()}
    report = EvalReport()
    for target in cfg.targets:
        pc = _probe_cfg(cfg, target)
        if target == "category":
            probe = fit_linear_probe(tables["train"], pc)
            report.add("standard", target, "test", seed, probe.accuracy(tables["test"], target))
            if "test_heldout_bg" in tables:
                report.add("standard", target, "test_heldout_bg", seed,
                           probe.accuracy(tables["test_heldout_bg"], target))
        elif target == "object":
            probe = fit_linear_probe(tables["train"], pc)
            report.add("standard", target, "test", seed, probe.accuracy(tables["object_test"], target))
        else:
            probe = fit_linear_probe(tables["train"], pc)
            report.add("standard", target, "test", seed, probe.accuracy(tables["background_test"], target))
    for protocol in cfg.protocols:
        if protocol == "standard":
            continue
        sets = EvalSets(tables["train"], tables["test"],
                        {a: (tables[f"train@{a:g}"], tables[f"test@{a:g}"]) for a in cfg.orientations})
        report.extend(evaluate_protocol(sets, protocol, "category", cfg.orientations,
                                        _probe_cfg(cfg, "category"), seed))
    return report


def evaluate_corpus(encoder, index: DatasetIndex, cfg: ExperimentConfig, seed: int) -> EvalReport:
    """Category on held-out objects; object and session on held-out frames of train objects."""
    c = cfg.corpus
    splits = make_splits(index, SplitSpec(validation_stride=c.validation_stride,
                                          toybox_train_fraction=c.toybox_train_fraction), seed=seed)

    def table(view):
        imgs = view.load_all(c.image_size, c.channels)
        return extract_features(encoder, imgs, {k: view.labels(k) for k in ("object_id", "category_id", "session_id")})

    train_t, test_t = table(splits.train), table(splits.test)
    val_t = table(splits.validation) if len(splits.validation) else None
    report = EvalReport()
    for target in cfg.eval.targets:
        pc = _probe_cfg(cfg.eval, target)
        if target == "category":
            probe = fit_linear_probe(train_t, pc)
            report.add("standard", target, "test", seed, probe.accuracy(test_t, target))
        elif val_t is not None and target in ("object", "session"):
            probe = fit_linear_probe(train_t, pc)
            report.add("standard", target, "validation", seed, probe.accuracy(val_t, target))
    return report


# -- single runs -------------------------------------------------------------------

@dataclass
class RunOutput:
    result: TrainResult
    report: EvalReport | None
    seconds: float


def make_source(cfg: ExperimentConfig, seed: int, world: World | None = None, index: DatasetIndex | None = None,
                buffer: PairBuffer | None = None):
    t = cfg.train
    if t.source == "stream":
        world = world or make_world(cfg.world, cfg.world_seed)
        stream = InteractionStream(world, cfg.interaction, seed)
        return StreamSource(stream, cfg.augment, t.pair_mode, seed, capacity=t.buffer_capacity,
                            pushes_per_step=t.pushes_per_step, prefill=t.prefill)
    if index is None:
        raise ValueError(f"source {t.source!r} needs a dataset index")
    train_view = make_splits(index, SplitSpec(validation_stride=cfg.corpus.validation_stride,
                                              toybox_train_fraction=cfg.corpus.toybox_train_fraction),
                             seed=seed).train
    if buffer is None:
        if t.source == "toybox":
            buffer = build_toybox_pairs(train_view, seed=seed, exclude=cfg.corpus.exclude_transformations)
        else:
            from dataclasses import replace
            buffer = build_buffer(train_view, replace(cfg.sampler, seed=seed))
    return BufferSource(train_view, buffer, cfg.augment, t.pair_mode, seed, policy=PairPolicy(t.one_aug),
                        dataset_size=len(train_view), image_size=cfg.corpus.image_size,
                        channels=cfg.corpus.channels)


def load_corpus_index(cfg: ExperimentConfig, cache: Path | None = None) -> DatasetIndex:
    if cache is not None and cache.exists():
        return load_index(cache)
    c = cfg.corpus
    if c.root is None:
        raise ValueError("[corpus] root is required for corpus-based sources")
    if c.layout == "core50":
        return index_dataset(c.root, "core50", objects_per_category=c.objects_per_category, strict=c.strict,
                             pattern=c.pattern)
    if c.layout == "toybox":
        return index_dataset(c.root, "toybox", fps_subsample=c.fps_subsample, source_fps=c.source_fps,
                             max_clip_frames=c.max_clip_frames)
    return index_dataset(c.root, "episodes")


def run_seed(cfg: ExperimentConfig, seed: int, checkpoint_path=None, index: DatasetIndex | None = None,
             world: World | None = None, eval_images: dict | None = None,
             buffer: PairBuffer | None = None) -> RunOutput:
    """Train one seed and, when enabled, probe the result."""
    from dataclasses import replace

    cfg = cfg.effective()
    t0 = time.perf_counter()
    if cfg.train.source == "stream":
        world = world or make_world(cfg.world, cfg.world_seed)
    source = make_source(cfg, seed, world=world, index=index, buffer=buffer)
    learner = build_learner(cfg.encoder, cfg.loss.objective, seed)
    result = train(learner, source, cfg.loss, replace(cfg.train, seed=seed), checkpoint_path=checkpoint_path)
    report = None
    if cfg.eval.enabled:
        report = probe_learner(cfg, learner.encoder, seed, index=index, world=world, eval_images=eval_images)
    return RunOutput(result, report, time.perf_counter() - t0)


def probe_learner(cfg: ExperimentConfig, encoder, seed: int, index=None, world=None, eval_images=None) -> EvalReport:
    cfg = cfg.effective()
    if cfg.train.source == "stream":
        world = world or make_world(cfg.world, cfg.world_seed)
        images = eval_images if eval_images is not None else synth_eval_images(world, cfg.eval)
        return evaluate_synth(encoder, images, cfg.eval, seed)
    if index is None:
        raise ValueError("probing a corpus-trained model needs the dataset index")
    return evaluate_corpus(encoder, index, cfg, seed)
