"""Linear-probe evaluation of frozen encoders."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .stats import summarize, ttest_independent

TARGETS = ("category", "object", "session", "background")
PROTOCOLS = ("standard", "single_single", "multi_single", "majority_vote")
DEFAULT_ORIENTATIONS = (0.0, 10.0, -45.0, 80.0, -80.0, -90.0)
_LABEL_KEYS = {"category": "category_id", "object": "object_id", "session": "session_id",
               "background": "background_id"}


@dataclass
class FeatureTable:
    features: np.ndarray
    labels: dict

    def __post_init__(self):
        self.features = np.asarray(self.features)
        for k, v in self.labels.items():
            if len(v) != len(self.features):
                raise ValueError(f"label column {k!r} has {len(v)} rows, features have {len(self.features)}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    def __len__(self):
        return len(self.features)

    def target(self, name: str) -> np.ndarray:
        key = _LABEL_KEYS.get(name, name)
        if key not in self.labels:
            raise KeyError(f"label {key!r} not in feature table (have {sorted(self.labels)})")
        return np.asarray(self.labels[key])

    def subset(self, mask) -> "FeatureTable":
        return FeatureTable(self.features[mask], {k: np.asarray(v)[mask] for k, v in self.labels.items()})


def extract_features(model, images: np.ndarray, labels: dict, batch_size: int = 256) -> FeatureTable:
    """Eval-mode representations (before any projection head) for every image."""
    dtype = next(iter(model.parameters())).data.dtype
    chunks = [model(images[i:i + batch_size].astype(dtype, copy=False), train=False).data
              for i in range(0, len(images), batch_size)]
    feats = np.concatenate(chunks).astype(np.float64) if chunks else np.zeros((0, model.config.embed_dim))
    return FeatureTable(feats, {k: np.asarray(v) for k, v in labels.items()})


@dataclass(frozen=True)
class ProbeConfig:
    target: str = "category"
    epochs: int = 500
    lr: float = 0.1
    l2: float = 1e-4
    seed: int = 0
    standardize: bool = True


@dataclass
class LinearProbe:
    W: np.ndarray
    b: np.ndarray
    classes: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def scores(self, features: np.ndarray) -> np.ndarray:
        return ((features - self.mean) / self.scale) @ self.W + self.b

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.scores(features), axis=1)]

    def accuracy(self, table: FeatureTable, target: str) -> float:
        return float(np.mean(self.predict(table.features) == table.target(target)))


def fit_linear_probe(table: FeatureTable, cfg: ProbeConfig = ProbeConfig()) -> LinearProbe:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with the training statistics; weights start at
    zero so the fit is deterministic.
    """
    y_raw = table.target(cfg.target)
    classes, y = np.unique(y_raw, return_inverse=True)
    if len(classes) < 2:
        raise ValueError(f"probe target {cfg.target!r} has a single class; need at least 2")
    x = table.features.astype(np.float64)
    d = x.shape[1]
    if cfg.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale < 1e-8] = 1.0
    else:
        mean, scale = np.zeros(d), np.ones(d)
    xs = (x - mean) / scale
    n, k = len(xs), len(classes)
    onehot = np.eye(k)[y]
    W = np.zeros((d, k))
    b = np.zeros(k)
    for _ in range(cfg.epochs):
        p = softmax(xs @ W + b, axis=1)
        g = (p - onehot) / n
        W -= cfg.lr * (xs.T @ g + cfg.l2 * W)
        b -= cfg.lr * g.sum(axis=0)
    return LinearProbe(W, b, classes, mean, scale)


def probe_loss(probe: LinearProbe, table: FeatureTable, target: str) -> float:
    y = np.searchsorted(probe.classes, table.target(target))
    return float(-log_softmax(probe.scores(table.features), axis=1)[np.arange(len(y)), y].mean())


def majority_vote(predictions: np.ndarray, scores: np.ndarray) -> int:
    """Most frequent class; ties go to the larger summed score, then the lower index.

    ``predictions`` holds one class index per view and ``scores`` the
    per-view class scores (views x classes).
    """
    predictions = np.asarray(predictions)
    scores = np.asarray(scores, dtype=np.float64)
    counts = np.bincount(predictions, minlength=scores.shape[1])
    tied = np.flatnonzero(counts == counts.max())
    if len(tied) == 1:
        return int(tied[0])
    summed = scores.sum(axis=0)[tied]
    return int(tied[np.flatnonzero(summed == summed.max())[0]])


# -- protocols ---------------------------------------------------------------------

@dataclass
class EvalSets:
    """Feature tables for one model.

    ``train``/``test`` are multi-view tables; ``orientations`` maps an angle
    to a ``(train, test)`` pair of single-view tables.
    """
    train: FeatureTable
    test: FeatureTable
    orientations: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def add(self, protocol, target, split, seed, accuracy):
        self.rows.append({"protocol": protocol, "target": target, "split": str(split), "seed": int(seed),
                          "accuracy": float(accuracy)})

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.rows.extend(other.rows)
        return self

    def accuracy(self, protocol, target, split="test") -> list:
        return [r["accuracy"] for r in self.rows
                if r["protocol"] == protocol and r["target"] == target and r["split"] == str(split)]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=("protocol", "target", "split", "seed", "accuracy"),
                               lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow(dict(r, accuracy=repr(r["accuracy"])))

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        rep = cls()
        with Path(path).open() as fh:
            for r in csv.DictReader(fh):
                rep.add(r["protocol"], r["target"], r["split"], int(r["seed"]), float(r["accuracy"]))
        return rep

    def summary(self, compare=None) -> dict:
        """Mean/SD/SE per (protocol, target, split); optional t-test blocks.

        ``compare`` is an iterable of ``(name, report_a, report_b, protocol,
        target, split)`` tuples.
        """
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r["protocol"], r["target"], r["split"]), []).append(r["accuracy"])
        out = {"groups": [dict(protocol=p, target=t, split=s, **summarize(v)) for (p, t, s), v in groups.items()]}
        tests = []
        for name, ra, rb, p, t, s in compare or ():
            res = ttest_independent(ra.accuracy(p, t, s), rb.accuracy(p, t, s))
            tests.append(dict(name=name, M=[res.mean_a, res.mean_b], SD=[res.sd_a, res.sd_b],
                              df=res.df, t=res.t, p=res.p_two_tailed))
        if tests:
            out["ttests"] = tests
        return out

    def write_summary(self, path, compare=None) -> None:
        Path(path).write_text(json.dumps(self.summary(compare), indent=2, sort_keys=True) + "\n")


def evaluate_protocol(sets: EvalSets, protocol: str, target: str = "category", orientations=None,
                      probe_cfg: ProbeConfig | None = None, seed: int = 0) -> EvalReport:
    """Accuracy of linear probes under one evaluation protocol.

    ``standard`` trains on ``sets.train`` and tests on ``sets.test``.
    ``single_single`` trains and tests at the same fixed orientation.
    ``multi_single`` trains on ``sets.train`` and tests per orientation.
    ``majority_vote`` classifies each test object at every orientation with
    that orientation's single-single probe and takes a vote per object.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    cfg = probe_cfg or ProbeConfig(target=target, seed=seed)
    if cfg.target != target:
        cfg = ProbeConfig(target, cfg.epochs, cfg.lr, cfg.l2, cfg.seed, cfg.standardize)
    report = EvalReport()
    if protocol == "standard":
        probe = fit_linear_probe(sets.train, cfg)
        report.add(protocol, target, "train", seed, probe.accuracy(sets.train, target))
        report.add(protocol, target, "test", seed, probe.accuracy(sets.test, target))
        return report

    angles = [float(a) for a in (DEFAULT_ORIENTATIONS if orientations is None else orientations)]
    missing = [a for a in angles if a not in sets.orientations]
    if missing:
        raise KeyError(f"missing single-view datasets for orientations {missing}")
    if protocol == "multi_single":
        probe = fit_linear_probe(sets.train, cfg)
        for a in angles:
            report.add(protocol, target, f"test@{a:g}", seed, probe.accuracy(sets.orientations[a][1], target))
        return report

    probes = {a: fit_linear_probe(sets.orientations[a][0], cfg) for a in angles}
    if protocol == "single_single":
        for a in angles:
            report.add(protocol, target, f"test@{a:g}", seed, probes[a].accuracy(sets.orientations[a][1], target))
        return report

    # majority vote over the per-orientation probes, one decision per test object
    classes = probes[angles[0]].classes
    if any(not np.array_equal(p.classes, classes) for p in probes.values()):
        raise ValueError("per-orientation probes were trained on different class sets")
    votes: dict[int, tuple[list, list]] = {}
    truth: dict[int, object] = {}
    for a in angles:
        table = sets.orientations[a][1]
        prob = softmax(probes[a].scores(table.features), axis=1)
        pred = np.argmax(prob, axis=1)
        for obj, y, pr, sc in zip(table.labels["object_id"], table.target(target), pred, prob):
            v = votes.setdefault(int(obj), ([], []))
            v[0].append(pr)
            v[1].append(sc)
            truth[int(obj)] = y
    correct = [classes[majority_vote(np.array(p), np.array(s))] == truth[o] for o, (p, s) in sorted(votes.items())]
    report.add(protocol, target, "test", seed, float(np.mean(correct)))
    return report


# -- cross-validation --------------------------------------------------------------

def crossval_object_splits(objects: dict, k: int = 5, seed: int = 0) -> list:
    """``k`` (train, test) object partitions holding out one object per category.

    ``objects`` maps object id to category id. Within a category the held-out
    objects are a seeded permutation, so no object is held out twice when the
    category has at least ``k`` objects; smaller categories cycle.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    by_cat: dict = {}
    for obj, cat in sorted(objects.items()):
        by_cat.setdefault(cat, []).append(obj)
    held = {}
    for cat, objs in sorted(by_cat.items()):
        if len(objs) < 2:
            raise ValueError(f"category {cat} has {len(objs)} object(s); cannot hold one out and still train")
        held[cat] = [objs[i] for i in rng.permutation(len(objs))]
    splits = []
    all_objs = set(objects)
    for i in range(k):
        test = {held[cat][i % len(held[cat])] for cat in held}
        splits.append((sorted(all_objs - test), sorted(test)))
    return splits
