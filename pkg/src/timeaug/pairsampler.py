"""Temporal positive pairs: buffer cycles, successive-frame clips, stream buffers.

Frame references are positions into a :class:`~timeaug.corpus.DatasetIndex`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugConfig, augment

PAIR_KINDS = ("temporal", "css", "object_transition")


def expected_run_length(p: float) -> float:
    """Mean number of successive frames when each step continues with prob ``p``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"continuation probability must be in [0, 1), got {p}")
    return 1.0 + p / (1.0 - p)


def sample_run_lengths(p: float, n: int, rng) -> np.ndarray:
    """``n`` run lengths ``1 + (number of continuations)``, each continuing with prob ``p``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"continuation probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(n, dtype=np.int64)
    # numpy's geometric counts trials to first success (>= 1), i.e. the run length
    return rng.geometric(1.0 - p, size=n).astype(np.int64)


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "randomwalk"
    p_o: float | None = None
    N_o: int | None = 10
    p_s: float | None = None
    N_s: int | None = None
    cycles: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("randomwalk", "uniform"):
            raise ValueError(f"mode must be randomwalk or uniform, got {self.mode!r}")
        if (self.p_o is None) == (self.N_o is None):
            raise ValueError("set exactly one of p_o and N_o")
        if self.p_s is not None and self.N_s is not None:
            raise ValueError("set at most one of p_s and N_s")
        for name in ("p_o", "p_s"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        for name in ("N_o", "N_s"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        if self.N_o is not None and self.N_s is not None and self.N_s > self.N_o:
            raise ValueError(f"N_s={self.N_s} exceeds N_o={self.N_o}; a session cannot outlive its object run")
        if self.cycles is not None and self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")

    def mean_run_length(self) -> float:
        return float(self.N_o) if self.N_o is not None else expected_run_length(self.p_o)


@dataclass
class PairBuffer:
    """Pairs of frame references in buffer order.

    ``views`` is the raw view sequence; ``pairs[k]`` links ``views[k]`` and
    ``views[k + 1]`` for cycle buffers. ``run_starts`` holds the view index
    at which each object run begins, ``cycle_boundaries`` the pair index at
    which each cycle begins.
    """
    pairs: list
    kinds: list
    cycle_boundaries: list = field(default_factory=list)
    total_views: int = 0
    views: list = field(default_factory=list)
    run_starts: list = field(default_factory=list)
    warnings: int = 0

    def __len__(self):
        return len(self.pairs)

    def dump(self, path) -> None:
        with Path(path).open("w") as fh:
            for k, ((a, b), kind) in enumerate(zip(self.pairs, self.kinds)):
                fh.write(json.dumps({"pair_index": k, "frame_ref_a": int(a), "frame_ref_b": int(b),
                                     "pair_kind": kind}) + "\n")

    @classmethod
    def load(cls, path) -> "PairBuffer":
        pairs, kinds = [], []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                r = json.loads(line)
                pairs.append((r["frame_ref_a"], r["frame_ref_b"]))
                kinds.append(r["pair_kind"])
        return cls(pairs, kinds, total_views=len(pairs) + 1 if pairs else 0)


class _Layout:
    """object -> session -> list of clips (each a frame-ordered list of positions)."""

    def __init__(self, index):
        self.records = index.records
        self.by_object: dict[int, dict[int, list[list[int]]]] = {}
        self.clip_of: dict[int, tuple[list[int], int]] = {}
        for clip in index.clips().values():
            if not clip:
                raise ValueError("empty clip in index")
            r = self.records[clip[0]]
            self.by_object.setdefault(r.object_id, {}).setdefault(r.session_id, []).append(clip)
            for k, pos in enumerate(clip):
                self.clip_of[pos] = (clip, k)
        self.objects = sorted(self.by_object)

    def uniform_view(self, obj, rng, session=None) -> int:
        sessions = self.by_object[obj]
        if session is None:
            frames = [p for clips in sessions.values() for c in clips for p in c]
        else:
            frames = [p for c in sessions[session] for p in c]
        return frames[int(rng.integers(len(frames)))]


def build_buffer(index, cfg: SamplerConfig) -> PairBuffer:
    """Build the training buffer cycle by cycle.

    Every cycle visits all objects once in a fresh random order. Each visit is
    a run of views of that object; consecutive views form ``temporal`` pairs
    (or ``css`` pairs when the session switches) and the last view of a run is
    paired with the first view of the next run (``object_transition``).
    """
    if len(index) == 0:
        raise ValueError("cannot build a buffer from an empty index")
    rng = np.random.default_rng(cfg.seed)
    layout = _Layout(index)
    objects = layout.objects
    cycles = cfg.cycles
    if cycles is None:
        cycles = max(1, math.ceil(len(index) / (len(objects) * cfg.mean_run_length())))

    views: list[int] = []
    view_kind: list[str] = []  # kind of the pair ending at this view
    run_starts: list[int] = []
    cycle_view_starts: list[int] = []
    n_warn = 0

    for _ in range(cycles):
        cycle_view_starts.append(len(views))
        order = rng.permutation(len(objects))
        if cfg.N_o is None:
            lengths = sample_run_lengths(cfg.p_o, len(objects), rng)
        else:
            lengths = np.full(len(objects), cfg.N_o)
        for oi, n_views in zip(order, lengths):
            obj = objects[int(oi)]
            run_starts.append(len(views))
            cur = layout.uniform_view(obj, rng)
            views.append(cur)
            view_kind.append("object_transition")
            since_switch = 0
            for _step in range(int(n_views) - 1):
                since_switch += 1
                if cfg.N_s is not None:
                    switch = since_switch % cfg.N_s == 0
                elif cfg.p_s is not None:
                    switch = rng.random() >= cfg.p_s
                else:
                    switch = False
                sess = layout.records[cur].session_id
                others = [s for s in layout.by_object[obj] if s != sess]
                if switch and not others:
                    n_warn += 1
                    switch = False
                if switch:
                    new_sess = others[int(rng.integers(len(others)))]
                    cur = layout.uniform_view(obj, rng, session=new_sess)
                    view_kind.append("css")
                    since_switch = 0
                else:
                    clip, k = layout.clip_of[cur]
                    if cfg.mode == "randomwalk":
                        if len(clip) == 1:
                            nk = 0
                        elif k == 0:
                            nk = 1
                        elif k == len(clip) - 1:
                            nk = k - 1
                        else:
                            nk = k + (1 if rng.random() < 0.5 else -1)
                    else:
                        nk = int(rng.integers(len(clip)))
                    cur = clip[nk]
                    view_kind.append("temporal")
                views.append(cur)

    if n_warn:
        warnings.warn(f"{n_warn} session switch(es) fell back to same-session sampling "
                      "(object recorded in a single session)", stacklevel=2)
    pairs = [(views[k], views[k + 1]) for k in range(len(views) - 1)]
    kinds = view_kind[1:]
    boundaries = [max(0, s - 1) for s in cycle_view_starts]
    return PairBuffer(pairs, kinds, boundaries, len(views), views, run_starts, n_warn)


def build_toybox_pairs(index, seed: int = 0, exclude=()) -> PairBuffer:
    """Successive frames within a clip; a clip's last frame pairs with the next clip's first.

    Clips whose transformation tag is in ``exclude`` are dropped first.
    """
    rng = np.random.default_rng(seed)
    clips = [c for c in index.clips().values() if index.records[c[0]].transformation not in set(exclude)]
    if not clips:
        raise ValueError("no clips left to pair")
    order = rng.permutation(len(clips))
    views, kinds, starts = [], [], []
    for ci in order:
        clip = clips[int(ci)]
        starts.append(len(views))
        for k, pos in enumerate(clip):
            views.append(pos)
            kinds.append("object_transition" if k == 0 else "temporal")
    pairs = [(views[k], views[k + 1]) for k in range(len(views) - 1)]
    return PairBuffer(pairs, kinds[1:], [0], len(views), views, starts)


def iterate_epoch(buffer: PairBuffer, batch_size: int, seed: int, dataset_size: int | None = None):
    """Yield arrays of pair indices sampled uniformly with replacement.

    One epoch visits ``dataset_size`` pairs (default: the buffer length), so
    every training image is presented once per epoch on average.
    """
    n = len(buffer)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    rng = np.random.default_rng(seed)
    for _ in range((dataset_size or n) // batch_size):
        yield rng.integers(0, n, size=batch_size)


class StreamBuffer:
    """Fixed-capacity ring of pairs; the oldest entry is overwritten first."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.storage: list = []
        self.write_head = 0

    def __len__(self):
        return len(self.storage)

    def push(self, pair) -> None:
        if not isinstance(pair, tuple) or len(pair) != 2:
            raise ValueError("a pair must be a 2-tuple")
        if len(self.storage) < self.capacity:
            self.storage.append(pair)
        else:
            self.storage[self.write_head] = pair
        self.write_head = (self.write_head + 1) % self.capacity

    def contents(self) -> list:
        """Pairs from oldest to newest."""
        if len(self.storage) < self.capacity:
            return list(self.storage)
        return self.storage[self.write_head:] + self.storage[:self.write_head]

    def sample(self, batch_size: int, rng) -> list:
        if not self.storage:
            raise ValueError("cannot sample from an empty stream buffer")
        idx = rng.integers(0, len(self.storage), size=batch_size)
        return [self.storage[i] for i in idx]


def stream_push(buf: StreamBuffer, pair) -> None:
    buf.push(pair)


def stream_sample(buf: StreamBuffer, batch_size: int, rng) -> list:
    return buf.sample(batch_size, rng)


class PairPolicy:
    """How the augmented partner of a source image is produced.

    ``one`` draws a single augmented partner per source key and reuses it;
    ``per_minibatch`` draws a fresh augmentation every time.
    """

    def __init__(self, mode: str):
        if mode not in ("one", "per_minibatch"):
            raise ValueError(f"mode must be one or per_minibatch, got {mode!r}")
        self.mode = mode
        self._cache: dict = {}

    def partner(self, key, image: np.ndarray, aug: AugConfig, rng) -> np.ndarray:
        if self.mode == "per_minibatch":
            return augment(image, aug, rng)
        if key not in self._cache:
            self._cache[key] = augment(image, aug, rng)
        return self._cache[key]


def one_aug_control(mode: str) -> PairPolicy:
    return PairPolicy(mode)
