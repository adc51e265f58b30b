"""Layers and encoder builders on top of the autodiff tensor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import Parameter, Tensor, _make, _t


class ShapeError(ValueError):
    pass


# -- functional pieces with hand-written backward ------------------------------

def conv2d(x, weight, bias, stride: int = 1, padding: int = 0):
    """2-D cross-correlation, NCHW input, (out, in, k, k) weight."""
    xd = T._as_array(x)
    wd = T._as_array(weight)
    n, c, h, w = xd.shape
    oc, ic, kh, kw = wd.shape
    if c != ic:
        raise ShapeError(f"conv2d expects {ic} input channels, got input of shape {xd.shape}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit input {xd.shape} with padding {padding}")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (n, ho, wo, c, kh, kw) -> rows
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = wd.reshape(oc, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + T._as_array(bias)
    out = out.reshape(n, ho, wo, oc).transpose(0, 3, 1, 2)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, oc)
        gw = (gm.T @ cols).reshape(wd.shape)
        gb = gm.sum(axis=0) if bias is not None else None
        gcols = (gm @ wmat).reshape(n, ho, wo, c, kh, kw)
        gx = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if padding:
            gx = gx[:, :, padding:padding + h, padding:padding + w]
        res = [(_t(x), gx), (_t(weight), gw)]
        if bias is not None:
            res.append((_t(bias), gb))
        return tuple(res)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out), parents, "conv2d", bw)


def dropout(x, p: float, train: bool, rng: np.random.Generator | None):
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is the identity."""
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep


# -- modules ------------------------------------------------------------------

class Module:
    """Minimal container: named parameters, named buffers, children."""

    def __init__(self):
        self._children: dict[str, Module] = {}
        self._params: dict[str, Parameter] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def add_param(self, name, value):
        p = Parameter(value, name=name)
        self._params[name] = p
        return p

    def named_parameters(self, prefix=""):
        for k, p in self._params.items():
            yield prefix + k, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for k in self._buffers:
            yield prefix + k, self, k
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, owner, key in self.named_buffers():
            state["buffer:" + name] = owner._buffers[key]
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for name, p in self.named_parameters():
            p.data = np.array(state[name], dtype=p.data.dtype, copy=True)
        for name, owner, key in self.named_buffers():
            owner._buffers[key] = np.array(state["buffer:" + name], dtype=owner._buffers[key].dtype, copy=True)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for _, owner, key in self.named_buffers():
            owner._buffers[key] = owner._buffers[key].astype(dtype)
        return self

    def __call__(self, x, train: bool = False, rng=None):
        return self.forward(x, train=train, rng=rng)

    def forward(self, x, train=False, rng=None):  # pragma: no cover - abstract
        raise NotImplementedError


# Weight bound multiplier for layers followed by a ReLU (He uniform).
RELU_GAIN = float(np.sqrt(6.0))


def _fan_in_uniform(rng, shape, fan_in, dtype, gain=1.0):
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# Layers feeding a ReLU use He-scaled weights and zero biases. With plain
# fan-in init the signal shrinks layer by layer, the biases dominate and every
# embedding starts out pointing the same way. Output layers keep a fan-in
# bias so an input that silences every hidden unit still maps to a
# nonzero vector, where normalisation is smooth.


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float32, gain=1.0, fan_in_bias=False):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_param("weight", _fan_in_uniform(rng, (in_features, out_features), in_features, dtype,
                                                               gain))
        self.bias = None
        if bias:
            init = _fan_in_uniform(rng, (out_features,), in_features, dtype) if fan_in_bias else np.zeros(out_features, dtype)
            self.bias = self.add_param("bias", init)

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects (..., {self.in_features}), got {tuple(x.shape)}")
        out = T.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng, dtype=np.float32, gain=1.0):
        super().__init__()
        fan_in = in_ch * kernel * kernel
        self.stride, self.padding, self.kernel = stride, padding, kernel
        self.weight = self.add_param("weight", _fan_in_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype,
                                                               gain))
        self.bias = self.add_param("bias", np.zeros(out_ch, dtype))

    def forward(self, x, train=False, rng=None):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm1d(Module):
    """Batch normalization over the batch axis with running statistics."""

    def __init__(self, features, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", np.ones(features, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(features, dtype=dtype))
        self._buffers["running_mean"] = np.zeros(features, dtype=dtype)
        self._buffers["running_var"] = np.ones(features, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        if train:
            n = x.shape[0]
            mu = T.mean(x, axis=0, keepdims=True)
            xc = x - mu
            var = T.mean(xc * xc, axis=0, keepdims=True)
            m = self.momentum
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            unbiased = var.data[0] * (n / max(n - 1, 1))
            self._buffers["running_mean"] = ((1 - m) * rm + m * mu.data[0]).astype(rm.dtype)
            self._buffers["running_var"] = ((1 - m) * rv + m * unbiased).astype(rv.dtype)
            xhat = xc / T.sqrt(var + self.eps)
        else:
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            xhat = (x - rm) / np.sqrt(rv + self.eps).astype(rv.dtype)
        return xhat * self.gamma + self.beta


class ReLU(Module):
    def forward(self, x, train=False, rng=None):
        return T.relu(x)


class Dropout(Module):
    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x, train=False, rng=None):
        return dropout(x, self.p, train, rng)


class Flatten(Module):
    def forward(self, x, train=False, rng=None):
        return T.reshape(x, (x.shape[0], -1))


class GlobalAvgPool(Module):
    def forward(self, x, train=False, rng=None):
        return T.mean(x, axis=(2, 3))


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            self.add_child(str(i), layer)

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer(x, train=train, rng=rng)
        return x


# -- encoders -----------------------------------------------------------------

DEFAULT_CONV_STACK = ((64, 8, 4, 2), (128, 4, 2, 1), (256, 4, 2, 1), (256, 4, 2, 1))


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "conv_stack"
    conv_stack: tuple = DEFAULT_CONV_STACK
    mlp_hidden: tuple = (256,)
    embed_dim: int = 128
    dropout_p: float = 0.5
    projection_head: tuple | None = None
    projection_batchnorm: bool = True
    input_shape: tuple = (3, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "conv_stack", tuple(tuple(int(v) for v in layer) for layer in self.conv_stack))
        object.__setattr__(self, "mlp_hidden", tuple(int(v) for v in self.mlp_hidden))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.projection_head is not None:
            object.__setattr__(self, "projection_head", tuple(int(v) for v in self.projection_head))
        if self.kind not in ("conv_stack", "mlp"):
            raise ValueError(f"encoder kind must be 'conv_stack' or 'mlp', got {self.kind!r}")
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


class Encoder(Module):
    """Image encoder (conv stack or MLP) with an optional projection head.

    ``forward`` returns the representation used for probing;
    ``project`` maps it through the projection head when one is configured.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c, h, w = config.input_shape
        layers: list[Module] = []
        if config.kind == "conv_stack":
            in_ch = c
            for out_ch, k, s, p in config.conv_stack:
                layers += [Conv2d(in_ch, out_ch, k, s, p, rng, gain=RELU_GAIN), ReLU(), Dropout(config.dropout_p)]
                in_ch = out_ch
                h = (h + 2 * p - k) // s + 1
                w = (w + 2 * p - k) // s + 1
                if h < 1 or w < 1:
                    raise ShapeError(f"conv stack collapses spatial size below 1 at layer {(out_ch, k, s, p)}")
            layers += [GlobalAvgPool(), Linear(in_ch, config.embed_dim, rng, fan_in_bias=True)]
        else:
            in_f = c * h * w
            layers.append(Flatten())
            for width in config.mlp_hidden:
                layers += [Linear(in_f, width, rng, gain=RELU_GAIN), ReLU(), Dropout(config.dropout_p)]
                in_f = width
            layers.append(Linear(in_f, config.embed_dim, rng, fan_in_bias=True))
        self.body = self.add_child("body", Sequential(*layers))
        self.head = None
        if config.projection_head:
            hidden, out = config.projection_head
            parts: list[Module] = [Linear(config.embed_dim, hidden, rng)]
            if config.projection_batchnorm:
                parts.append(BatchNorm1d(hidden))
            parts += [ReLU(), Linear(hidden, out, rng, fan_in_bias=True)]
            self.head = self.add_child("head", Sequential(*parts))

    @property
    def output_dim(self) -> int:
        return self.config.projection_head[1] if self.config.projection_head else self.config.embed_dim

    def forward(self, x, train=False, rng=None):
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        expected = self.config.input_shape
        if tuple(x.shape[1:]) != expected:
            raise ShapeError(f"encoder expects batch shape (N, {', '.join(map(str, expected))}), got {tuple(x.shape)}")
        return self.body(x, train=train, rng=rng)

    def project(self, h, train=False, rng=None):
        return self.head(h, train=train, rng=rng) if self.head is not None else h


class MLP(Module):
    """Two-layer perceptron, used as the BYOL predictor."""

    def __init__(self, in_f, hidden, out_f, rng):
        super().__init__()
        self.net = self.add_child("net", Sequential(Linear(in_f, hidden, rng, gain=RELU_GAIN), ReLU(),
                                                    Linear(hidden, out_f, rng, fan_in_bias=True)))

    def forward(self, x, train=False, rng=None):
        return self.net(x, train=train, rng=rng)


def forward(model: Encoder, batch, train_mode: bool = False, rng=None) -> Tensor:
    """Embed a batch; in train mode dropout is active and the graph is recorded."""
    return model(batch, train=train_mode, rng=rng)
