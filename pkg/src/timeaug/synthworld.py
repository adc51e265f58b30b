"""Procedural object-interaction world.

Objects are 2-D silhouettes whose radius is a short Fourier series in the
polar angle. Each object has a *front* and a *side* silhouette; rendering at
yaw angle ``theta`` blends the two radii with weights ``(1 + cos theta) / 2``
and ``(1 - cos theta) / 2`` and mirrors the result for ``theta`` in (180, 360),
which gives a cheap stand-in for rotating a 3-D toy in front of the camera.
Objects of a category share a prototype; instances jitter its coefficients.

Backgrounds are plaids (two sinusoids) or, in blank mode, uniform mid-gray.
Everything is a pure function of ``(config, seed)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

DIST_MIN = 0.65
DIST_MAX = 1.1
D_REF = 0.65
D_NOMINAL = (DIST_MIN + DIST_MAX) / 2
# largest possible silhouette radius as a fraction of image size
_MAX_RADIUS_FRAC = 0.35
_AMP_BUDGET = 0.5
_JITTER = 0.2
BLANK_ALBEDO = 0.9
# textured worlds: objects are always brighter than any background pixel
ALBEDO_RANGE = (0.75, 1.0)
BG_BASE_RANGE = (0.1, 0.45)
BG_AMP_RANGE = (0.05, 0.14)
_MAX_SPREAD = 0.5
_MAX_R = 1.0 + _AMP_BUDGET * (1.0 + _MAX_SPREAD) * (1.0 + _JITTER)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class WorldConfig:
    n_categories: int = 5
    objects_per_category: int = 12
    image_size: int = 32
    channels: int = 3
    n_backgrounds: int = 8
    blank_background: bool = False
    train_fraction_per_category: float = 2 / 3
    n_harmonics: int = 4
    n_heldout_backgrounds: int = 0
    category_spread: float = 0.5

    def validate(self) -> "WorldConfig":
        if self.n_categories < 2:
            raise ConfigError("n_categories", f"must be >= 2, got {self.n_categories}")
        if self.objects_per_category < 3:
            raise ConfigError("objects_per_category", f"must be >= 3, got {self.objects_per_category}")
        if self.image_size < 16:
            raise ConfigError("image_size", f"must be >= 16, got {self.image_size}")
        if self.channels not in (1, 3):
            raise ConfigError("channels", f"must be 1 or 3, got {self.channels}")
        if self.n_backgrounds < 1:
            raise ConfigError("n_backgrounds", f"must be >= 1, got {self.n_backgrounds}")
        if self.n_heldout_backgrounds < 0:
            raise ConfigError("n_heldout_backgrounds", f"must be >= 0, got {self.n_heldout_backgrounds}")
        if not 0.0 < self.train_fraction_per_category < 1.0:
            raise ConfigError("train_fraction_per_category",
                              f"must be in (0, 1), got {self.train_fraction_per_category}")
        n_train = round(self.objects_per_category * self.train_fraction_per_category)
        if not 1 <= n_train < self.objects_per_category:
            raise ConfigError("train_fraction_per_category",
                              "leaves an empty train or test split per category")
        if self.n_harmonics < 1:
            raise ConfigError("n_harmonics", f"must be >= 1, got {self.n_harmonics}")
        if not 0.0 <= self.category_spread <= _MAX_SPREAD:
            raise ConfigError("category_spread", f"must be in [0, {_MAX_SPREAD}], got {self.category_spread}")
        return self


@dataclass(frozen=True)
class Silhouette:
    amps: tuple  # a_0..a_M
    phases: tuple  # psi_0..psi_M

    def radius(self, phi: np.ndarray) -> np.ndarray:
        r = np.full_like(phi, self.amps[0])
        for m in range(1, len(self.amps)):
            r = r + self.amps[m] * np.cos(m * phi + self.phases[m])
        return r


@dataclass(frozen=True)
class ShapeObject:
    object_id: int
    category_id: int
    front: Silhouette
    side: Silhouette
    albedo: tuple


@dataclass(frozen=True)
class Background:
    background_id: int
    base: tuple
    amp: tuple
    freqs: tuple
    phases: tuple
    heldout: bool = False


@dataclass(frozen=True)
class Pose:
    orientation_deg: float
    distance_m: float

    def __post_init__(self):
        object.__setattr__(self, "orientation_deg", float(self.orientation_deg) % 360.0)
        object.__setattr__(self, "distance_m", float(np.clip(self.distance_m, DIST_MIN, DIST_MAX)))


@dataclass
class World:
    config: WorldConfig
    seed: int
    objects: list
    backgrounds: list
    train_objects: dict  # category -> list of object ids
    test_objects: dict

    @property
    def train_object_ids(self) -> list[int]:
        return sorted(i for ids in self.train_objects.values() for i in ids)

    @property
    def test_object_ids(self) -> list[int]:
        return sorted(i for ids in self.test_objects.values() for i in ids)

    @property
    def train_background_ids(self) -> list[int]:
        return [b.background_id for b in self.backgrounds if not b.heldout]

    @property
    def heldout_background_ids(self) -> list[int]:
        return [b.background_id for b in self.backgrounds if b.heldout]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "seed": self.seed,
            "objects": [asdict(o) for o in self.objects],
            "backgrounds": [asdict(b) for b in self.backgrounds],
            "train_objects": {str(k): v for k, v in self.train_objects.items()},
            "test_objects": {str(k): v for k, v in self.test_objects.items()},
        }

    def serialize(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True).encode()

    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()


def _tuple(a) -> tuple:
    return tuple(float(x) for x in a)


def _prototype(rng, n_harmonics) -> Silhouette:
    m = np.arange(1, n_harmonics + 1)
    raw = rng.uniform(0.2, 1.0, size=n_harmonics) / np.sqrt(m)
    amps = _AMP_BUDGET * raw / raw.sum() * rng.uniform(0.6, 1.0)
    phases = rng.uniform(0.0, 2 * np.pi, size=n_harmonics)
    return Silhouette(_tuple(np.r_[1.0, amps]), _tuple(np.r_[0.0, phases]))


def _jitter(rng, proto: Silhouette, amount: float = _JITTER) -> Silhouette:
    """Relative amplitude jitter and absolute phase jitter, both bounded by ``amount``."""
    amps = np.asarray(proto.amps)
    phases = np.asarray(proto.phases)
    k = len(amps) - 1
    new_amps = amps.copy()
    new_amps[1:] = amps[1:] * (1.0 + rng.uniform(-amount, amount, size=k))
    new_phases = phases.copy()
    new_phases[1:] = phases[1:] + rng.uniform(-amount, amount, size=k)
    return Silhouette(_tuple(new_amps), _tuple(new_phases))


def make_world(config: WorldConfig, seed: int) -> World:
    """Build category prototypes, object instances, splits and backgrounds."""
    config.validate()
    rng = np.random.default_rng([int(seed), 0x5EED])
    objects = []
    train, test = {}, {}
    n_train = round(config.objects_per_category * config.train_fraction_per_category)
    oid = 0
    # categories deviate from a shared base shape, instances from their category
    base_front = _prototype(rng, config.n_harmonics)
    base_side = _prototype(rng, config.n_harmonics)
    for cat in range(config.n_categories):
        front_proto = _jitter(rng, base_front, config.category_spread)
        side_proto = _jitter(rng, base_side, config.category_spread)
        ids = []
        for _ in range(config.objects_per_category):
            if config.blank_background:
                # shared albedo: identity and category must be read from shape
                albedo = (BLANK_ALBEDO,) * config.channels
            else:
                albedo = _tuple(rng.uniform(*ALBEDO_RANGE, size=config.channels))
            objects.append(ShapeObject(oid, cat, _jitter(rng, front_proto), _jitter(rng, side_proto), _tuple(albedo)))
            ids.append(oid)
            oid += 1
        perm = rng.permutation(ids)
        train[cat] = sorted(int(i) for i in perm[:n_train])
        test[cat] = sorted(int(i) for i in perm[n_train:])
    backgrounds = []
    for b in range(config.n_backgrounds + config.n_heldout_backgrounds):
        backgrounds.append(Background(
            background_id=b,
            base=_tuple(rng.uniform(*BG_BASE_RANGE, size=config.channels)),
            amp=_tuple(rng.uniform(*BG_AMP_RANGE, size=config.channels)),
            freqs=_tuple(rng.integers(1, 6, size=2)),
            phases=_tuple(rng.uniform(0.0, 2 * np.pi, size=2)),
            heldout=b >= config.n_backgrounds,
        ))
    return World(config, int(seed), objects, backgrounds, train, test)


@lru_cache(maxsize=8)
def _polar_grid(size: int):
    c = size / 2.0
    coords = np.arange(size) + 0.5 - c
    x = np.broadcast_to(coords[None, :], (size, size))
    y = np.broadcast_to(-coords[:, None], (size, size))
    return np.hypot(x, y), x, y


def _background_image(world: World, background_id: int) -> np.ndarray:
    cfg = world.config
    s = cfg.image_size
    if cfg.blank_background:
        return np.full((cfg.channels, s, s), 0.5, dtype=np.float32)
    bg = world.backgrounds[background_id]
    u = (np.arange(s) + 0.5) / s
    wave = (np.sin(2 * np.pi * bg.freqs[0] * u[None, :] + bg.phases[0])
            + np.sin(2 * np.pi * bg.freqs[1] * u[:, None] + bg.phases[1]))
    img = np.asarray(bg.base)[:, None, None] + np.asarray(bg.amp)[:, None, None] * wave[None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def silhouette_mask(world: World, obj: ShapeObject, pose: Pose) -> np.ndarray:
    """Boolean (H, W) mask: pixel centers inside the posed silhouette."""
    s = world.config.image_size
    rho, x, y = _polar_grid(s)
    theta = np.deg2rad(pose.orientation_deg)
    if 180.0 < pose.orientation_deg < 360.0:
        x = -x
    phi = np.arctan2(y, x)
    w_front = (1.0 + np.cos(theta)) / 2.0
    r = w_front * obj.front.radius(phi) + (1.0 - w_front) * obj.side.radius(phi)
    scale = _MAX_RADIUS_FRAC * s / _MAX_R * (D_REF / pose.distance_m)
    return rho < r * scale


def render_view(world: World, object_id: int, pose: Pose, background_id: int) -> np.ndarray:
    """Render a (channels, H, W) float32 image in [0, 1]."""
    if not 0 <= object_id < len(world.objects):
        raise KeyError(f"unknown object_id {object_id}")
    if not 0 <= background_id < len(world.backgrounds):
        raise KeyError(f"unknown background_id {background_id}")
    obj = world.objects[object_id]
    img = _background_image(world, background_id)
    mask = silhouette_mask(world, obj, pose)
    albedo = np.asarray(obj.albedo, dtype=np.float32)[:, None, None]
    return np.where(mask[None], albedo, img).astype(np.float32)


# -- interactions -------------------------------------------------------------

@dataclass(frozen=True)
class InteractionConfig:
    rot: float = 360.0
    d_max: float = 0.075
    N_s: int = 10
    room_change: bool = False
    p_o: float = 0.9
    episode_length: int = 100
    egomotion: bool = True

    def validate(self) -> "InteractionConfig":
        if not 0.0 <= self.rot <= 360.0:
            raise ConfigError("rot", f"must be in [0, 360], got {self.rot}")
        if self.d_max < 0:
            raise ConfigError("d_max", f"must be >= 0, got {self.d_max}")
        if self.N_s < 1:
            raise ConfigError("N_s", f"must be >= 1, got {self.N_s}")
        if not 0.0 <= self.p_o <= 1.0:
            raise ConfigError("p_o", f"must be in [0, 1], got {self.p_o}")
        if self.episode_length < 1:
            raise ConfigError("episode_length", f"must be >= 1, got {self.episode_length}")
        return self


@dataclass(frozen=True)
class AgentState:
    pose: Pose
    object_id: int
    background_id: int
    timestep: int = 0


@dataclass(frozen=True)
class Frame:
    image: np.ndarray = field(repr=False, compare=False)
    object_id: int
    category_id: int
    background_id: int
    session_id: int
    orientation_deg: float
    distance_m: float
    timestep: int

    def metadata(self) -> dict:
        return {
            "object_id": self.object_id,
            "category_id": self.category_id,
            "background_id": self.background_id,
            "session_id": self.session_id,
            "orientation_deg": self.orientation_deg,
            "distance_m": self.distance_m,
            "timestep": self.timestep,
        }


def make_frame(world: World, state: AgentState) -> Frame:
    obj = world.objects[state.object_id]
    return Frame(
        image=render_view(world, state.object_id, state.pose, state.background_id),
        object_id=state.object_id,
        category_id=obj.category_id,
        background_id=state.background_id,
        session_id=state.background_id,
        orientation_deg=state.pose.orientation_deg,
        distance_m=state.pose.distance_m,
        timestep=state.timestep,
    )


def _next_background(world: World, current: int, room_change: bool, rng) -> int:
    ids = world.train_background_ids
    n = len(ids)
    if n == 1:
        return current
    pos = ids.index(current)
    if room_change:
        k = int(rng.integers(n - 1))
        return ids[k if k < pos else k + 1]
    step = 1 if rng.random() < 0.5 else -1
    return ids[(pos + step) % n]


def _fresh_pose(rng) -> Pose:
    # a newly picked-up object is held at mid reach; only its orientation is random
    return Pose(rng.uniform(0.0, 360.0), D_NOMINAL)


def step_interaction(state: AgentState, cfg: InteractionConfig, world: World, rng) -> tuple[AgentState, Frame]:
    """Advance the agent one timestep and render what it sees.

    The held object turns by Uniform[0, rot] degrees and moves by
    Uniform[-d_max, d_max] metres (clamped to the arm's reach). Every ``N_s``
    steps the agent turns to another background; with ego-motion it keeps its
    object with probability ``p_o``, without ego-motion it always picks up a
    new one. A new object starts from a fresh random pose.
    """
    t = state.timestep + 1
    orient = state.pose.orientation_deg + rng.uniform(0.0, cfg.rot)
    dist = state.pose.distance_m + rng.uniform(-cfg.d_max, cfg.d_max)
    pose = Pose(orient, dist)
    obj, bg = state.object_id, state.background_id
    if t % cfg.N_s == 0:
        bg = _next_background(world, bg, cfg.room_change, rng)
        switch = True if not cfg.egomotion else rng.random() >= cfg.p_o
        candidates = [i for i in world.train_object_ids if i != obj]
        if switch and candidates:
            obj = candidates[int(rng.integers(len(candidates)))]
            pose = _fresh_pose(rng)
    new = AgentState(pose, obj, bg, t)
    return new, make_frame(world, new)


def initial_state(world: World, rng) -> AgentState:
    ids = world.train_object_ids
    bgs = world.train_background_ids
    obj = ids[int(rng.integers(len(ids)))]
    bg = bgs[int(rng.integers(len(bgs)))]
    return AgentState(_fresh_pose(rng), obj, bg, 0)


def generate_episode(world: World, cfg: InteractionConfig, seed, length: int | None = None) -> list[Frame]:
    """``length`` frames from a seeded random start (timesteps 0..length-1)."""
    cfg.validate()
    length = cfg.episode_length if length is None else length
    if length < 1:
        raise ConfigError("length", f"must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    state = initial_state(world, rng)
    frames = [make_frame(world, state)]
    for _ in range(length - 1):
        state, frame = step_interaction(state, cfg, world, rng)
        frames.append(frame)
    return frames


class InteractionStream:
    """Endless sequence of episodes; yields ``(frame_t, frame_t+1)`` pairs.

    Pairs never straddle an episode boundary.
    """

    def __init__(self, world: World, cfg: InteractionConfig, seed: int):
        self.world = world
        self.cfg = cfg.validate()
        self.rng = np.random.default_rng([int(seed), 0xE915])
        self._start_episode()

    def _start_episode(self):
        self.state = initial_state(self.world, self.rng)
        self.frame = make_frame(self.world, self.state)

    def next_pair(self) -> tuple[Frame, Frame]:
        if self.state.timestep >= self.cfg.episode_length - 1:
            self._start_episode()
        self.state, nxt = step_interaction(self.state, self.cfg, self.world, self.rng)
        pair = (self.frame, nxt)
        self.frame = nxt
        return pair


def render_batch(world: World, object_ids, orientations, distances, background_ids) -> np.ndarray:
    """Render many views at once; returns (N, C, H, W) float32."""
    out = [render_view(world, int(o), Pose(a, d), int(b))
           for o, a, d, b in zip(object_ids, orientations, distances, background_ids)]
    return np.stack(out) if out else np.zeros((0, world.config.channels, world.config.image_size,
                                                world.config.image_size), np.float32)


# -- export -------------------------------------------------------------------

def export_episode(frames: list[Frame], directory, episode_id: int = 0) -> Path:
    """Write 8-bit PNG frames plus ``metadata.jsonl`` (one record per frame)."""
    from PIL import Image

    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    meta_path = directory / "metadata.jsonl"
    mode = "a" if meta_path.exists() else "w"
    start = 0
    if mode == "a":
        start = sum(1 for _ in meta_path.open())
    with meta_path.open(mode) as fh:
        for k, fr in enumerate(frames):
            idx = start + k
            name = f"frames/{idx:06d}.png"
            arr = np.round(np.clip(fr.image, 0, 1) * 255).astype(np.uint8)
            img = Image.fromarray(arr[0], "L") if arr.shape[0] == 1 else Image.fromarray(arr.transpose(1, 2, 0), "RGB")
            img.save(directory / name)
            rec = {"frame": idx, "path": name, "episode": episode_id, **fr.metadata()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return directory
