"""AdamW with decoupled weight decay, and EMA blending for target networks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptState:
    lr: float = 5e-4
    weight_decay: float = 1e-6
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict[str, Parameter], grads: dict[str, np.ndarray], opt: OptState) -> None:
    """One in-place AdamW update of ``params`` using ``grads``.

    Parameters without a gradient are left alone but still decayed, matching
    the usual decoupled formulation where decay does not depend on the loss.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
    opt.step += 1
    b1, b2 = opt.betas
    t = opt.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = opt.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = opt.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        opt.m[name] = m.astype(p.data.dtype)
        opt.v[name] = v.astype(p.data.dtype)
        data = p.data * (1.0 - opt.lr * opt.weight_decay)
        data = data - opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        p.data = data.astype(p.data.dtype)


class AdamW:
    """Object wrapper binding an :class:`OptState` to a parameter set."""

    def __init__(self, named_params, lr=5e-4, weight_decay=1e-6, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.state = OptState(lr=lr, weight_decay=weight_decay, betas=tuple(betas), eps=eps)

    def step(self):
        grads = {k: p.grad for k, p in self.params.items()}
        adamw_step(self.params, grads, self.state)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def ema_blend(target, online, tau: float):
    """``tau * target + (1 - tau) * online``, elementwise."""
    return tau * np.asarray(target) + (1.0 - tau) * np.asarray(online)
