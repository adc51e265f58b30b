"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import backward


def numerical_gradient(loss_fn, param, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. entries of ``param.data``.

    ``loss_fn`` must be deterministic (fixed dropout masks, no running-stat
    dependence). Only ``indices`` (flat) are perturbed when given; the rest of
    the returned array is NaN.
    """
    flat = param.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn().data)
        flat[i] = orig - h
        fm = float(loss_fn().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(param.shape)


def max_relative_error(loss_fn, params, h: float = 1e-5, max_entries: int | None = None, rng=None,
                       floor: float = 1e-3) -> float:
    """Largest per-tensor relative error between autodiff and finite differences.

    For each parameter tensor the error is ``max|a - n| / max(max|a|, max|n|)``
    over the checked entries, which stays meaningful when individual entries
    are near zero. The denominator is bounded below by ``floor`` times the
    largest gradient entry over all checked tensors, so a tensor whose true
    gradient is identically zero (a bias feeding a batch norm) is judged
    against the model's gradient scale instead of its own rounding noise.
    All arrays should be float64.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    pairs = []
    for p, a in zip(params, analytic):
        indices = None
        if max_entries is not None and p.data.size > max_entries:
            rng = rng or np.random.default_rng(0)
            indices = rng.choice(p.data.size, size=max_entries, replace=False)
        n = numerical_gradient(loss_fn, p, h=h, indices=indices)
        mask = ~np.isnan(n)
        pairs.append((a[mask], n[mask]))
    global_scale = max(max(np.max(np.abs(a)), np.max(np.abs(n))) for a, n in pairs)
    if global_scale == 0.0:
        return 0.0
    worst = 0.0
    for a, n in pairs:
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor * global_scale)
        worst = max(worst, float(np.max(np.abs(a - n)) / scale))
    return worst
