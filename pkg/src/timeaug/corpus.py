"""Indexing of frame-sequence datasets and train/validation/test splits.

Three on-disk layouts are understood:

``core50``
    ``root/session_<S>/object_<O>/frame_<N>.png`` (canonical). Any directory
    or file name of the form ``<letters>_<digits>`` or ``<letters><digits>``
    parses; ``permissive`` mode instead takes a regex with named groups
    ``session``, ``object`` and ``frame`` matched against the relative path.
``toybox``
    ``root/<category>/<object>/<transformation>/<clip>/<N>.png``.
``episodes``
    a synthworld export: ``root/metadata.jsonl`` plus ``root/frames/*.png``.

Indexes serialize to JSON lines (a header line, then one record per line).
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

LAYOUTS = ("core50", "toybox", "episodes")
TRANSFORMATIONS = ("translation_x", "translation_y", "translation_z",
                   "rotation_x", "rotation_y", "rotation_z", "hodgepodge", "none")
_TRANSFORM_ALIASES = {
    "tx": "translation_x", "ty": "translation_y", "tz": "translation_z",
    "rx": "rotation_x", "ry": "rotation_y", "rz": "rotation_z",
    "ho": "hodgepodge", "present": "none", "absent": "none", "nothing": "none",
}
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
_NUMBERED = re.compile(r"^[A-Za-z]*_?(\d+)$")


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    path: str
    object_id: int
    category_id: int
    session_id: int
    clip_id: str
    frame_no: int
    transformation: str | None = None
    meta: dict | None = field(default=None, compare=False, hash=False)


@dataclass
class DatasetIndex:
    records: list
    layout: str
    root: str | None = None
    images: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def validate(self) -> "DatasetIndex":
        cat_of: dict[int, int] = {}
        last: dict[str, int] = {}
        for r in self.records:
            if cat_of.setdefault(r.object_id, r.category_id) != r.category_id:
                raise LayoutError(f"object {r.object_id} maps to categories {cat_of[r.object_id]} and {r.category_id}")
            prev = last.get(r.clip_id)
            if prev is not None and r.frame_no <= prev:
                raise LayoutError(f"frame numbers not increasing in clip {r.clip_id!r}")
            last[r.clip_id] = r.frame_no
        return self

    def subset(self, positions) -> "DatasetIndex":
        positions = list(positions)
        imgs = None if self.images is None else self.images[positions]
        return DatasetIndex([self.records[i] for i in positions], self.layout, self.root, imgs)

    def objects(self) -> dict[int, int]:
        """object_id -> category_id"""
        return {r.object_id: r.category_id for r in self.records}

    def clips(self) -> dict[str, list[int]]:
        """clip_id -> record positions ordered by frame number"""
        out: dict[str, list[int]] = {}
        for i, r in enumerate(self.records):
            out.setdefault(r.clip_id, []).append(i)
        for k in out:
            out[k].sort(key=lambda i: self.records[i].frame_no)
        return out

    def load(self, position: int, image_size: int | None = None, channels: int | None = None) -> np.ndarray:
        if self.images is not None:
            return self.images[position]
        rec = self.records[position]
        path = Path(rec.path) if self.root is None else Path(self.root) / rec.path
        return load_image(path, image_size=image_size, channels=channels)

    def load_all(self, image_size: int | None = None, channels: int | None = None) -> np.ndarray:
        if self.images is not None:
            return self.images
        return np.stack([self.load(i, image_size, channels) for i in range(len(self))])

    def labels(self, key: str) -> np.ndarray:
        return np.array([getattr(r, key) for r in self.records])


def load_image(path, image_size: int | None = None, channels: int | None = None) -> np.ndarray:
    """Decode to float32 (C, H, W) in [0, 1]; nearest-neighbour resize to a square."""
    from PIL import Image

    from .augment import resize_nearest

    with Image.open(path) as im:
        if channels == 1:
            im = im.convert("L")
        elif channels == 3 or im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    if image_size is not None and arr.shape[1:] != (image_size, image_size):
        arr = resize_nearest(arr, image_size, image_size)
    return np.ascontiguousarray(arr)


def _parse_number(name: str, path: Path) -> int:
    m = _NUMBERED.match(name)
    if not m:
        raise LayoutError(f"cannot parse a numeric id from {name!r} in {path}")
    return int(m.group(1))


def _image_files(directory: Path):
    return sorted(p for p in directory.rglob("*") if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES)


def index_core50_layout(root, objects_per_category: int = 5, category_map: dict | None = None,
                        strict: bool = True, pattern: str | None = None) -> DatasetIndex:
    """Index a CORe50-style tree: one clip per (session, object).

    Categories come from ``category_map`` (object -> category) if given, else
    ``object_id // objects_per_category``.
    """
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"dataset root {root} is not a directory")
    regex = re.compile(pattern) if pattern else None
    records = []
    for f in _image_files(root):
        rel = f.relative_to(root)
        if regex is not None:
            m = regex.search(rel.as_posix())
            if not m:
                if strict:
                    raise LayoutError(f"path {rel} does not match pattern {pattern!r}")
                continue
            session, obj, frame = int(m.group("session")), int(m.group("object")), int(m.group("frame"))
        else:
            parts = rel.parts
            if len(parts) != 3:
                if strict:
                    raise LayoutError(f"expected session/object/frame, got {rel}")
                continue
            try:
                session = _parse_number(parts[0], rel)
                obj = _parse_number(parts[1], rel)
                frame = _parse_number(Path(parts[2]).stem, rel)
            except LayoutError:
                if strict:
                    raise
                continue
        cat = category_map[obj] if category_map is not None else obj // objects_per_category
        records.append(Record(rel.as_posix(), obj, int(cat), session, f"s{session}_o{obj}", frame))
    if not records:
        raise LayoutError(f"no images found under {root}")
    records.sort(key=lambda r: (r.session_id, r.object_id, r.frame_no))
    return DatasetIndex(records, "core50", str(root)).validate()


def _canonical_transformation(tag: str, where) -> str:
    t = tag.lower()
    t = _TRANSFORM_ALIASES.get(t, t)
    if t not in TRANSFORMATIONS:
        warnings.warn(f"unknown transformation tag {tag!r} at {where}; using 'other'", stacklevel=3)
        return "other"
    return t


def index_toybox_layout(root, fps_subsample: int = 2, source_fps: int = 2,
                        max_clip_frames: int = 50) -> DatasetIndex:
    """Index a ToyBox-style tree, keeping ``fps_subsample`` frames per second.

    Frames on disk are assumed to be extracted at ``source_fps``. Clips that
    end up with fewer than 2 frames are dropped; clips longer than
    ``max_clip_frames`` are truncated. Both cases warn.
    """
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"dataset root {root} is not a directory")
    if source_fps % fps_subsample:
        raise LayoutError(f"source_fps {source_fps} is not a multiple of fps_subsample {fps_subsample}")
    stride = source_fps // fps_subsample
    categories = sorted(p.name for p in root.iterdir() if p.is_dir())
    records = []
    obj_counter = 0
    for cat_id, cat in enumerate(categories):
        for obj_dir in sorted(p for p in (root / cat).iterdir() if p.is_dir()):
            obj_id = obj_counter
            obj_counter += 1
            for tdir in sorted(p for p in obj_dir.iterdir() if p.is_dir()):
                tag = _canonical_transformation(tdir.name, tdir)
                for clip_dir in sorted(p for p in tdir.iterdir() if p.is_dir()):
                    files = sorted(_image_files(clip_dir), key=lambda p: _parse_number(p.stem, p))
                    kept = files[::stride]
                    clip_id = clip_dir.relative_to(root).as_posix()
                    if len(kept) < 2:
                        warnings.warn(f"dropping clip {clip_id}: {len(kept)} frame(s) after subsampling", stacklevel=2)
                        continue
                    if len(kept) > max_clip_frames:
                        warnings.warn(f"truncating clip {clip_id} to {max_clip_frames} frames", stacklevel=2)
                        kept = kept[:max_clip_frames]
                    for f in kept:
                        records.append(Record(f.relative_to(root).as_posix(), obj_id, cat_id, 0, clip_id,
                                              _parse_number(f.stem, f), tag))
    return DatasetIndex(records, "toybox", str(root)).validate()


def index_episodes_layout(root) -> DatasetIndex:
    """Re-index a synthworld export; one clip per (episode, background) run."""
    root = Path(root)
    meta = root / "metadata.jsonl"
    if not meta.exists():
        raise LayoutError(f"{meta} not found")
    records = []
    for line in meta.read_text().splitlines():
        if not line.strip():
            continue
        m = json.loads(line)
        records.append(Record(m["path"], int(m["object_id"]), int(m["category_id"]), int(m["session_id"]),
                              f"e{m['episode']}_o{m['object_id']}_s{m['session_id']}", int(m["frame"]),
                              meta=m))
    if not records:
        raise LayoutError(f"no records in {meta}")
    return DatasetIndex(records, "episodes", str(root)).validate()


def index_frames(frames, episode_id: int = 0) -> DatasetIndex:
    """In-memory index over synthworld frames (images kept in RAM)."""
    records = [Record(f"mem:{k}", f.object_id, f.category_id, f.session_id,
                      f"e{episode_id}_o{f.object_id}_s{f.session_id}", k, meta=f.metadata())
               for k, f in enumerate(frames)]
    images = np.stack([f.image for f in frames]) if frames else None
    return DatasetIndex(records, "episodes", None, images).validate()


def index_dataset(root, layout: str, **kwargs) -> DatasetIndex:
    if layout == "core50":
        return index_core50_layout(root, **kwargs)
    if layout == "toybox":
        return index_toybox_layout(root, **kwargs)
    if layout == "episodes":
        return index_episodes_layout(root)
    raise LayoutError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")


# -- cache --------------------------------------------------------------------

def save_index(index: DatasetIndex, path) -> None:
    with Path(path).open("w") as fh:
        fh.write(json.dumps({"layout": index.layout, "root": index.root, "n": len(index)}, sort_keys=True) + "\n")
        for r in index.records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def load_index(path) -> DatasetIndex:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    records = [Record(**json.loads(line)) for line in lines[1:] if line.strip()]
    return DatasetIndex(records, header["layout"], header["root"]).validate()


# -- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    held_out_object_per_category: dict | None = None
    validation_stride: int = 10
    toybox_train_fraction: float = 2 / 3

    def __post_init__(self):
        if self.validation_stride < 2:
            raise ValueError(f"validation_stride must be >= 2, got {self.validation_stride}")


@dataclass
class Splits:
    train: DatasetIndex
    validation: DatasetIndex
    test: DatasetIndex


def _by_category(index: DatasetIndex) -> dict[int, list[int]]:
    cats: dict[int, list[int]] = {}
    for obj, cat in sorted(index.objects().items()):
        cats.setdefault(cat, []).append(obj)
    return cats


def make_splits(index: DatasetIndex, spec: SplitSpec = SplitSpec(), seed: int = 0) -> Splits:
    """Disjoint, exhaustive train/validation/test views of ``index``.

    CORe50 layout: one held-out object per category forms the test set and
    every ``validation_stride``-th frame of the rest is validation. Other
    layouts split objects per category by ``toybox_train_fraction``.
    """
    rng = np.random.default_rng(seed)
    cats = _by_category(index)
    if index.layout == "core50":
        held = {}
        for cat, objs in cats.items():
            if len(objs) < 2:
                raise LayoutError(f"category {cat} has {len(objs)} object(s); cannot hold one out")
            given = (spec.held_out_object_per_category or {}).get(cat)
            if given is not None and given not in objs:
                raise LayoutError(f"held-out object {given} is not in category {cat}")
            held[cat] = given if given is not None else objs[int(rng.integers(len(objs)))]
        test_objs = set(held.values())
        tr, va, te = [], [], []
        for i, r in enumerate(index.records):
            if r.object_id in test_objs:
                te.append(i)
            elif r.frame_no % spec.validation_stride == 0:
                va.append(i)
            else:
                tr.append(i)
    else:
        train_objs = set()
        for cat, objs in cats.items():
            n_train = round(len(objs) * spec.toybox_train_fraction)
            perm = rng.permutation(objs)
            train_objs.update(int(o) for o in perm[:n_train])
        tr = [i for i, r in enumerate(index.records) if r.object_id in train_objs]
        te = [i for i, r in enumerate(index.records) if r.object_id not in train_objs]
        va = []
    return Splits(index.subset(tr), index.subset(va), index.subset(te))
