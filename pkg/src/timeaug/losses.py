"""Self-supervised objectives: NT-Xent (SimCLR), BYOL regression, VICReg."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import tensor as T
from .nn.tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    objective: str = "simclr"
    temperature: float = 0.1
    tau: float = 0.996
    vicreg_weights: tuple = (25.0, 25.0, 1.0)
    gamma: float = 1.0
    eps: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "vicreg_weights", tuple(float(w) for w in self.vicreg_weights))
        if self.objective not in ("simclr", "byol", "vicreg"):
            raise ValueError(f"objective must be simclr, byol or vicreg, got {self.objective!r}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if len(self.vicreg_weights) != 3 or any(w < 0 for w in self.vicreg_weights):
            raise ValueError(f"vicreg_weights must be three non-negative numbers, got {self.vicreg_weights}")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def nt_xent(z_a, z_b, temperature: float = 0.1) -> Tensor:
    """Normalized-temperature cross entropy over the 2N views of a batch.

    View ``i`` and view ``i + N`` are positives; every other view in the batch
    is a negative. Rows are L2-normalized first, so the loss depends only on
    cosine similarities.
    """
    z_a, z_b = _as_tensor(z_a), _as_tensor(z_b)
    n = z_a.shape[0]
    if n < 2:
        raise ValueError(f"nt_xent needs at least 2 pairs for in-batch negatives, got {n}")
    if z_b.shape != z_a.shape:
        raise ValueError(f"embedding shapes differ: {z_a.shape} vs {z_b.shape}")
    z = T.l2_normalize(T.concat([z_a, z_b], axis=0), axis=1)
    sim = T.matmul(z, T.transpose(z)) / temperature
    # drop self-similarity from the denominator
    self_mask = np.eye(2 * n, dtype=sim.dtype) * -1e9
    denom = T.logsumexp(sim + self_mask, axis=1)
    pos_idx = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    pos = sim[np.arange(2 * n), pos_idx]
    return T.mean(denom - pos)


def _cos_rows(a, b):
    return T.sum(T.l2_normalize(a, axis=1) * T.l2_normalize(b, axis=1), axis=1)


def byol_loss(online_pred_a, target_proj_b, online_pred_b, target_proj_a) -> Tensor:
    """Symmetrized BYOL regression: mean of ``2 - 2 cos`` over both view orders.

    Target projections are treated as constants.
    """
    za = Tensor(np.asarray(getattr(target_proj_a, "data", target_proj_a)))
    zb = Tensor(np.asarray(getattr(target_proj_b, "data", target_proj_b)))
    pa, pb = _as_tensor(online_pred_a), _as_tensor(online_pred_b)
    if pa.shape != zb.shape or pb.shape != za.shape:
        raise ValueError(f"prediction/target shapes differ: {pa.shape}, {zb.shape}, {pb.shape}, {za.shape}")
    l_ab = T.mean(2.0 - 2.0 * _cos_rows(pa, zb))
    l_ba = T.mean(2.0 - 2.0 * _cos_rows(pb, za))
    return (l_ab + l_ba) * 0.5


def _variance_term(z, gamma, eps):
    n = z.shape[0]
    zc = z - T.mean(z, axis=0, keepdims=True)
    var = T.sum(zc * zc, axis=0) / (n - 1)
    return T.mean(T.relu(gamma - T.sqrt(var + eps))), zc


def _covariance_term(zc):
    n, d = zc.shape
    cov = T.matmul(T.transpose(zc), zc) / (n - 1)
    off = cov * (1.0 - np.eye(d, dtype=cov.dtype))
    return T.sum(off * off) / d


def vicreg_loss(z_a, z_b, weights=(25.0, 25.0, 1.0), gamma: float = 1.0, eps: float = 1e-4) -> Tensor:
    """Invariance + variance hinge + covariance decorrelation.

    Variance and covariance terms are computed per branch and averaged.
    Variances use the unbiased (N - 1) estimator.
    """
    z_a, z_b = _as_tensor(z_a), _as_tensor(z_b)
    n = z_a.shape[0]
    if n < 2:
        raise ValueError(f"vicreg_loss needs at least 2 samples for a variance, got {n}")
    lam, mu, nu = weights
    diff = z_a - z_b
    inv = T.mean(diff * diff)
    var_a, zc_a = _variance_term(z_a, gamma, eps)
    var_b, zc_b = _variance_term(z_b, gamma, eps)
    cov = (_covariance_term(zc_a) + _covariance_term(zc_b)) * 0.5
    var = (var_a + var_b) * 0.5
    return inv * lam + var * mu + cov * nu
