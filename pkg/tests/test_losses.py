import math

import mpmath
import numpy as np
import pytest
from numpy.testing import assert_allclose

from timeaug.losses import LossConfig, byol_loss, nt_xent, vicreg_loss
from timeaug.nn import Tensor, backward

from oracles import ref_byol, ref_nt_xent, ref_vicreg


def test_nt_xent_orthogonal_case():
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    expected = float(mpmath.log((mpmath.e + 2) / mpmath.e))
    assert abs(float(nt_xent(z, z, 1.0).data) - expected) < 1e-9
    assert abs(expected - 0.551444) < 1e-6


def test_nt_xent_symmetric_case():
    z = np.ones((2, 3))
    assert abs(float(nt_xent(z, z, 1.0).data) - math.log(3)) < 1e-9


def test_nt_xent_scale_invariant():
    rng = np.random.default_rng(0)
    za, zb = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    assert_allclose(nt_xent(za * 5, zb * 5, 0.1).data, nt_xent(za, zb, 0.1).data, rtol=1e-10)


def test_nt_xent_needs_two_pairs():
    with pytest.raises(ValueError):
        nt_xent(np.ones((1, 3)), np.ones((1, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_nt_xent_matches_reference(seed):
    rng = np.random.default_rng(seed)
    za, zb = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert_allclose(nt_xent(za, zb, 0.5).data, ref_nt_xent(za, zb, 0.5), rtol=1e-10)


def test_byol_limits():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(4, 3))
    assert abs(float(byol_loss(p, p, p, p).data)) < 1e-10
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.array([[0.0, 2.0], [3.0, 0.0]])
    assert abs(float(byol_loss(a, b, a, b).data) - 2.0) < 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_byol_matches_reference(seed):
    rng = np.random.default_rng(100 + seed)
    pa, zb, pb, za = (rng.normal(size=(4, 5)) for _ in range(4))
    assert abs(float(byol_loss(pa, zb, pb, za).data) - ref_byol(pa, zb, pb, za)) < 1e-10


def test_byol_targets_receive_no_gradient():
    rng = np.random.default_rng(2)
    pa = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    pb = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    za = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    zb = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    backward(byol_loss(pa, zb, pb, za))
    assert pa.grad is not None and pb.grad is not None
    assert za.grad is None and zb.grad is None


def test_vicreg_zero_loss_construction():
    # two dims, 4 samples, each dim with sample std sqrt(1 - eps) and zero covariance
    eps = 1e-4
    s = math.sqrt((1 - eps) * 3 / 4)
    z = np.array([[s, s], [s, -s], [-s, s], [-s, -s]])
    assert abs(float(vicreg_loss(z, z, eps=eps).data)) < 1e-12


def test_vicreg_all_zero_embeddings():
    z = np.zeros((5, 2))
    assert_allclose(vicreg_loss(z, z).data, 25 * (1 - 0.01), rtol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_vicreg_matches_reference(seed):
    rng = np.random.default_rng(200 + seed)
    za, zb = rng.normal(size=(8, 4)) * 0.7, rng.normal(size=(8, 4)) * 0.7
    assert abs(float(vicreg_loss(za, zb).data) - ref_vicreg(za, zb)) < 1e-10


def test_vicreg_is_scale_sensitive():
    rng = np.random.default_rng(4)
    za, zb = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
    assert abs(float(vicreg_loss(za, zb).data) - float(vicreg_loss(3 * za, 3 * zb).data)) > 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_losses_symmetric_nonnegative_finite(seed):
    rng = np.random.default_rng(300 + seed)
    za, zb = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    pa, pb = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    for ab, ba in [(nt_xent(za, zb), nt_xent(zb, za)),
                   (vicreg_loss(za, zb), vicreg_loss(zb, za)),
                   (byol_loss(pa, zb, pb, za), byol_loss(pb, za, pa, zb))]:
        assert_allclose(ab.data, ba.data, rtol=1e-12)
        assert np.isfinite(ab.data) and ab.data >= 0


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(temperature=0)
    with pytest.raises(ValueError):
        LossConfig(tau=1.5)
    with pytest.raises(ValueError):
        LossConfig(vicreg_weights=(1, -1, 1))
    with pytest.raises(ValueError):
        LossConfig(objective="moco")
    assert LossConfig().temperature == 0.1
