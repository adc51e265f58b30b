"""Experiment configuration: strict TOML parsing into the module config types."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import tomli
import tomli_w

from .augment import ALL_AUGS, AugConfig
from .evaluate import DEFAULT_ORIENTATIONS, PROTOCOLS, TARGETS
from .losses import LossConfig
from .nn.layers import EncoderConfig
from .pairsampler import SamplerConfig
from .synthworld import InteractionConfig, WorldConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    root: str | None = None
    layout: str = "core50"
    objects_per_category: int = 5
    strict: bool = True
    pattern: str | None = None
    fps_subsample: int = 2
    source_fps: int = 2
    max_clip_frames: int = 50
    image_size: int = 32
    channels: int = 3
    validation_stride: int = 10
    toybox_train_fraction: float = 2 / 3
    exclude_transformations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "exclude_transformations", tuple(self.exclude_transformations))
        if self.layout not in ("core50", "toybox", "episodes"):
            raise ValueError(f"layout must be core50, toybox or episodes, got {self.layout!r}")


@dataclass(frozen=True)
class AblationConfig:
    """Letter-code toggles for the natural and conventional augmentations.

    R rotations, D depth changes, J colour jitter, G grayscale, C crop and
    resize, H horizontal flip, E ego-motion (session switch every step with
    room changes). Only toggles that are set override the other sections.
    """
    R: bool | None = None
    D: bool | None = None
    J: bool | None = None
    G: bool | None = None
    C: bool | None = None
    H: bool | None = None
    E: bool | None = None


@dataclass(frozen=True)
class EvalConfig:
    enabled: bool = True
    targets: tuple = ("category", "object")
    protocols: tuple = ("standard",)
    orientations: tuple = DEFAULT_ORIENTATIONS
    views_per_object: int = 20
    probe_epochs: int = 500
    probe_lr: float = 0.1
    probe_l2: float = 1e-4
    heldout_backgrounds: bool = False
    distance: str = "uniform"
    seed: int = 1234

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "protocols", tuple(self.protocols))
        object.__setattr__(self, "orientations", tuple(float(a) for a in self.orientations))
        for t in self.targets:
            if t not in TARGETS:
                raise ValueError(f"unknown probe target {t!r}; choose from {TARGETS}")
        for p in self.protocols:
            if p not in PROTOCOLS:
                raise ValueError(f"unknown protocol {p!r}; choose from {PROTOCOLS}")
        if self.distance not in ("uniform", "nominal"):
            raise ValueError(f"distance must be uniform or nominal, got {self.distance!r}")
        if self.views_per_object < 2:
            raise ValueError(f"views_per_object must be >= 2, got {self.views_per_object}")


@dataclass(frozen=True)
class SweepConfig:
    grid: dict = field(default_factory=dict)
    jobs: int = 1


SECTIONS = {
    "world": WorldConfig,
    "interaction": InteractionConfig,
    "corpus": CorpusConfig,
    "sampler": SamplerConfig,
    "augment": AugConfig,
    "ablation": AblationConfig,
    "encoder": EncoderConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "sweep": SweepConfig,
}
TOP_LEVEL = {"seeds": list, "run_id": str, "output_dir": str, "world_seed": int}
# pairs where setting one member switches the other off
_EXCLUSIVE = {"sampler": [("p_o", "N_o"), ("p_s", "N_s")], "train": [("steps", "epochs")]}


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    augment: AugConfig = field(default_factory=AugConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: tuple = (0,)
    run_id: str = "run"
    output_dir: str = "runs"
    world_seed: int = 0

    def effective(self) -> "ExperimentConfig":
        """Apply the ablation toggles to the sections they control."""
        a = self.ablation
        inter, aug = self.interaction, self.augment
        if a.R is not None:
            inter = replace(inter, rot=360.0 if a.R else 0.0)
        if a.D is not None:
            inter = replace(inter, d_max=0.075 if a.D else 0.0)
        if a.E is not None:
            inter = replace(inter, N_s=1, room_change=True, egomotion=True) if a.E \
                else replace(inter, N_s=10, room_change=False, egomotion=False)
        enabled = set(aug.enabled)
        for letter, name in (("J", "jitter"), ("G", "gray"), ("C", "crop"), ("H", "flip")):
            flag = getattr(a, letter)
            if flag is True:
                enabled.add(name)
            elif flag is False:
                enabled.discard(name)
        aug = replace(aug, enabled=frozenset(enabled))
        return replace(self, interaction=inter, augment=aug)


# -- typed conversion ------------------------------------------------------------

def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _convert(value, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        non_none = [a for a in args if a is not type(None)]
        errors = []
        for a in non_none:
            try:
                return _convert(value, a, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{where}: unsupported value {value!r}")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected bool, got {type(value).__name__} {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected int, got {type(value).__name__} {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected float, got {type(value).__name__} {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected str, got {type(value).__name__} {value!r}")
        return value
    if tp in (tuple, list, frozenset) or origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected array, got {type(value).__name__} {value!r}")
        seq = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        return frozenset(seq) if tp is frozenset else seq
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected table, got {type(value).__name__} {value!r}")
        return dict(value)
    raise ConfigError(f"{where}: unsupported field type {_type_name(tp)}")


def _build_section(name: str, raw: dict):
    cls = SECTIONS[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key '{key}' in [{name}]")
    kwargs = {k: _convert(v, hints[k], f"[{name}] {k}") for k, v in raw.items()}
    for a, b in _EXCLUSIVE.get(name, []):
        if a in kwargs and b not in kwargs:
            kwargs[b] = None
        elif b in kwargs and a not in kwargs:
            kwargs[a] = None
    try:
        obj = cls(**kwargs)
        if hasattr(obj, "validate"):
            obj.validate()
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[{name}] {exc}") from exc
    return obj


def config_from_dict(data: dict, base_dir=None) -> ExperimentConfig:
    kwargs = {}
    for key, value in data.items():
        if key in SECTIONS:
            kwargs[key] = _build_section(key, value)
        elif key in TOP_LEVEL:
            if key == "seeds":
                if not isinstance(value, list) or not value or not all(
                        isinstance(s, int) and not isinstance(s, bool) for s in value):
                    raise ConfigError("seeds must be a non-empty array of integers")
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = _convert(value, TOP_LEVEL[key], key)
        else:
            raise ConfigError(f"unknown key '{key}' at top level")
    cfg = ExperimentConfig(**kwargs)
    if "batch_size" not in data.get("train", {}) and cfg.train.source != "stream":
        cfg = replace(cfg, train=replace(cfg.train, batch_size=512))
    root = cfg.corpus.root
    if root is not None:
        path = Path(root)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"[corpus] root {root!r} does not exist")
        cfg = replace(cfg, corpus=replace(cfg.corpus, root=str(path.resolve())))
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Read a TOML experiment file, or the config stored in a run manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json":
        data = json.loads(text)
        data = data.get("config", data)
    else:
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


# -- serialization -----------------------------------------------------------------

def _plain(value):
    if isinstance(value, frozenset):
        return sorted(value)
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Every field materialized; ``None`` values are omitted (TOML has no null)."""
    out: dict = {"seeds": list(cfg.seeds), "run_id": cfg.run_id, "output_dir": cfg.output_dir,
                 "world_seed": cfg.world_seed}
    for name in SECTIONS:
        section = getattr(cfg, name)
        out[name] = _plain({f.name: getattr(section, f.name) for f in fields(section)})
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(config_to_dict(cfg), sort_keys=True).encode()).hexdigest()


def set_dotted(data: dict, dotted: str, value) -> dict:
    """Return a copy of a raw config dict with ``section.key`` (or ``key``) set."""
    out = json.loads(json.dumps(data))
    parts = dotted.split(".")
    node = out
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out
