import colorsys
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from timeaug.augment import (ALL_AUGS, AugConfig, _adjust_hue, augment, color_jitter, crop_resize, grayscale, hflip,
                             make_positive_pair)

GOLDEN = Path(__file__).parent / "golden"


def image(seed=0, c=3, s=16):
    return np.random.default_rng(seed).random((c, s, s)).astype(np.float32)


def test_crop_full_scale_square_is_identity():
    img = image()
    assert_array_equal(crop_resize(img, 1.0, (1.0, 1.0), np.random.default_rng(0)), img)


def test_crop_keeps_shape():
    rng = np.random.default_rng(1)
    img = image(s=20)
    for _ in range(50):
        assert crop_resize(img, 0.5, (3 / 4, 4 / 3), rng).shape == img.shape


def test_crop_degenerate_falls_back_to_identity():
    img = image(s=1)
    assert_array_equal(crop_resize(img, 0.01, (0.1, 10.0), np.random.default_rng(0)), img)


def test_crop_golden_checksum():
    golden = json.loads((GOLDEN / "crop_resize.json").read_text())
    img = (np.arange(3 * 32 * 32, dtype=np.float32).reshape(3, 32, 32) / (3 * 32 * 32))
    out = crop_resize(img, 0.08, (3 / 4, 4 / 3), np.random.default_rng(golden["seed"]))
    assert hashlib.sha256(out.tobytes()).hexdigest() == golden["sha256"]


def test_zero_strength_jitter_is_identity():
    img = image()
    assert_allclose(color_jitter(img, (0, 0, 0, 0), np.random.default_rng(0)), img, atol=1e-6)


def test_hflip_involution():
    img = image()
    rng = np.random.default_rng(0)
    assert_array_equal(hflip(hflip(img, 1.0, rng), 1.0, rng), img)
    assert_array_equal(hflip(img, 1.0, rng), img[:, :, ::-1])


def test_grayscale_channels_equal():
    out = grayscale(image(), 1.0, np.random.default_rng(0))
    assert_array_equal(out[0], out[1])
    assert_array_equal(out[1], out[2])
    assert_allclose(out[0], 0.299 * image()[0] + 0.587 * image()[1] + 0.114 * image()[2], rtol=1e-6)


def test_hue_rotation_matches_colorsys_yiq():
    px = np.array([0.2, 0.5, 0.7])
    shift = 0.1
    y, i, q = colorsys.rgb_to_yiq(*px)
    a = 2 * math.pi * shift
    i2, q2 = i * math.cos(a) - q * math.sin(a), i * math.sin(a) + q * math.cos(a)
    expected = colorsys.yiq_to_rgb(y, i2, q2)
    got = _adjust_hue(px.reshape(3, 1, 1), shift).reshape(3)
    # colorsys rounds the YIQ matrix differently, so agreement is only to a few 1e-3
    assert_allclose(got, expected, atol=5e-3)
    assert_allclose(got @ [0.299, 0.587, 0.114], px @ [0.299, 0.587, 0.114], atol=1e-12)
    assert_allclose(_adjust_hue(px.reshape(3, 1, 1), 1.0).reshape(3), px, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 3]))
def test_augment_stays_in_range_and_shape(seed, channels):
    img = image(seed, c=channels)
    out = augment(img, AugConfig(), np.random.default_rng(seed))
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("name", sorted(ALL_AUGS))
def test_disabling_each_augmentation_makes_it_identity(name):
    img = image(3)
    forced = dict(hflip_p=1.0, grayscale_p=1.0, jitter_p=1.0)
    assert not np.array_equal(augment(img, AugConfig(enabled={name}, **forced), np.random.default_rng(0)), img)
    # every other stage is neutral here, so the output is the input iff the named stage is skipped
    neutral = dict(crop_min_scale=1.0, crop_aspect=(1.0, 1.0), hflip_p=0.0, grayscale_p=0.0, jitter_p=0.0)
    out = augment(img, AugConfig(enabled=ALL_AUGS - {name}, **neutral), np.random.default_rng(0))
    assert_array_equal(out, img)


def test_config_validation():
    with pytest.raises(ValueError):
        AugConfig(crop_min_scale=0.0)
    with pytest.raises(ValueError):
        AugConfig(hflip_p=1.5)
    with pytest.raises(ValueError):
        AugConfig(enabled={"blur"})
    assert AugConfig.toybox().crop_min_scale == 0.5


def test_tt_view_b_is_successor():
    a, b = image(0), image(1)
    va, vb = make_positive_pair(a, b, "tt", AugConfig(), np.random.default_rng(0))
    assert va is a and vb is b


def test_baseline_identity_views_equal():
    a = image(0)
    va, vb = make_positive_pair(a, None, "baseline", AugConfig.identity(), np.random.default_rng(0))
    assert_array_equal(va, vb)


def test_tt_plus_with_identity_matches_tt():
    a, b = image(0), image(1)
    tt = make_positive_pair(a, b, "tt", AugConfig(), np.random.default_rng(0))
    ttp = make_positive_pair(a, b, "tt_plus", AugConfig.identity(), np.random.default_rng(0))
    assert_array_equal(tt[0], ttp[0])
    assert_array_equal(tt[1], ttp[1])


def test_missing_successor_and_bad_mode():
    with pytest.raises(ValueError):
        make_positive_pair(image(), None, "tt_plus", AugConfig(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_positive_pair(image(), image(), "moco", AugConfig(), np.random.default_rng(0))


def test_symmetric_flag_augments_source():
    a, b = image(0), image(1)
    cfg = AugConfig(enabled={"flip"}, hflip_p=1.0, symmetric=True)
    va, vb = make_positive_pair(a, b, "tt_plus", cfg, np.random.default_rng(0))
    assert_array_equal(va, a[:, :, ::-1])
    assert_array_equal(vb, b[:, :, ::-1])
