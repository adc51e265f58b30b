"""Conventional image augmentations and positive-pair construction.

Images are float arrays shaped (C, H, W) with values in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ALL_AUGS = frozenset({"crop", "flip", "jitter", "gray"})
PAIR_MODES = ("baseline", "tt", "tt_plus")

_LUMA = np.array([0.299, 0.587, 0.114])
_RGB2YIQ = np.array([[0.299, 0.587, 0.114],
                     [0.596, -0.274, -0.322],
                     [0.211, -0.523, 0.312]])
_YIQ2RGB = np.linalg.inv(_RGB2YIQ)


@dataclass(frozen=True)
class AugConfig:
    crop_min_scale: float = 0.08
    crop_aspect: tuple = (3 / 4, 4 / 3)
    hflip_p: float = 0.5
    jitter_strengths: tuple = (0.8, 0.8, 0.8, 0.2)
    jitter_p: float = 0.8
    grayscale_p: float = 0.2
    enabled: frozenset = ALL_AUGS
    symmetric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "enabled", frozenset(self.enabled))
        object.__setattr__(self, "crop_aspect", tuple(float(a) for a in self.crop_aspect))
        object.__setattr__(self, "jitter_strengths", tuple(float(s) for s in self.jitter_strengths))
        unknown = self.enabled - ALL_AUGS
        if unknown:
            raise ValueError(f"unknown augmentations {sorted(unknown)}; choose from {sorted(ALL_AUGS)}")
        if not 0.0 < self.crop_min_scale <= 1.0:
            raise ValueError(f"crop_min_scale must be in (0, 1], got {self.crop_min_scale}")
        for name in ("hflip_p", "jitter_p", "grayscale_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    @classmethod
    def identity(cls) -> "AugConfig":
        return cls(enabled=frozenset())

    @classmethod
    def toybox(cls) -> "AugConfig":
        return cls(crop_min_scale=0.5)


def resize_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    _, h, w = img.shape
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(int), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(int), w - 1)
    return img[:, rows][:, :, cols]


def crop_resize(img: np.ndarray, min_scale: float, aspect_range, rng, attempts: int = 10) -> np.ndarray:
    """Random resized crop: area fraction in [min_scale, 1], log-uniform aspect."""
    _, h, w = img.shape
    area = h * w
    lo, hi = math.log(aspect_range[0]), math.log(aspect_range[1])
    for _ in range(attempts):
        target = area * rng.uniform(min_scale, 1.0)
        ar = math.exp(rng.uniform(lo, hi))
        cw = int(round(math.sqrt(target * ar)))
        ch = int(round(math.sqrt(target / ar)))
        if 0 < cw <= w and 0 < ch <= h:
            i = int(rng.integers(0, h - ch + 1))
            j = int(rng.integers(0, w - cw + 1))
            return resize_nearest(img[:, i:i + ch, j:j + cw], h, w)
    return img.copy()


def hflip(img: np.ndarray, p: float, rng) -> np.ndarray:
    if rng.random() < p:
        return img[:, :, ::-1].copy()
    return img


def _luminance(img: np.ndarray) -> np.ndarray:
    if img.shape[0] == 1:
        return img[0]
    return np.tensordot(_LUMA, img, axes=1)


def grayscale(img: np.ndarray, p: float, rng) -> np.ndarray:
    """With probability ``p`` replace every channel by the luminance."""
    if rng.random() < p:
        return np.broadcast_to(_luminance(img), img.shape).astype(img.dtype)
    return img


def _adjust_brightness(img, f):
    return img * f


def _adjust_contrast(img, f):
    return f * img + (1.0 - f) * _luminance(img).mean()


def _adjust_saturation(img, f):
    if img.shape[0] == 1:
        return img
    return f * img + (1.0 - f) * _luminance(img)[None]


def _adjust_hue(img, shift):
    """Rotate the chroma plane of YIQ by ``shift`` turns; luminance is untouched."""
    if img.shape[0] == 1 or shift == 0.0:
        return img
    a = 2 * math.pi * shift
    rot = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
    m = _YIQ2RGB @ rot @ _RGB2YIQ
    return np.tensordot(m, img, axes=1)


def color_jitter(img: np.ndarray, strengths, rng, p: float = 1.0) -> np.ndarray:
    """Brightness, contrast, saturation, hue in random order; result clamped to [0, 1]."""
    if rng.random() >= p:
        return img
    b, c, s, h = strengths
    fb = rng.uniform(max(0.0, 1 - b), 1 + b)
    fc = rng.uniform(max(0.0, 1 - c), 1 + c)
    fs = rng.uniform(max(0.0, 1 - s), 1 + s)
    fh = rng.uniform(-h, h)
    ops = [(_adjust_brightness, fb), (_adjust_contrast, fc), (_adjust_saturation, fs), (_adjust_hue, fh)]
    out = img.astype(np.float64)
    for k in rng.permutation(4):
        fn, f = ops[k]
        out = fn(out, f)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def augment(img: np.ndarray, cfg: AugConfig, rng) -> np.ndarray:
    """The conventional pipeline: crop/resize, flip, jitter, grayscale."""
    out = img
    if "crop" in cfg.enabled:
        out = crop_resize(out, cfg.crop_min_scale, cfg.crop_aspect, rng)
    if "flip" in cfg.enabled:
        out = hflip(out, cfg.hflip_p, rng)
    if "jitter" in cfg.enabled:
        out = color_jitter(out, cfg.jitter_strengths, rng, p=cfg.jitter_p)
    if "gray" in cfg.enabled:
        out = grayscale(out, cfg.grayscale_p, rng)
    return out


def make_positive_pair(frame_t: np.ndarray, frame_t_next, mode: str, aug: AugConfig, rng):
    """Build ``(view_a, view_b)`` for one source image.

    ``baseline`` pairs the source with an augmented copy of itself, ``tt`` with
    its raw temporal successor and ``tt_plus`` with an augmented successor.
    With ``aug.symmetric`` the source view is augmented as well.
    """
    if mode not in PAIR_MODES:
        raise ValueError(f"pair mode must be one of {PAIR_MODES}, got {mode!r}")
    if mode in ("tt", "tt_plus") and frame_t_next is None:
        raise ValueError(f"mode {mode!r} needs the temporal successor of the source frame")
    view_a = augment(frame_t, aug, rng) if aug.symmetric and mode != "tt" else frame_t
    if mode == "baseline":
        return view_a, augment(frame_t, aug, rng)
    if mode == "tt":
        return view_a, frame_t_next
    return view_a, augment(frame_t_next, aug, rng)
