"""Small dense-tensor autodiff engine: tensors, layers, AdamW, gradient checks."""

from .tensor import (GraphError, Parameter, Tensor, backward, concat, exp, l2_normalize, log,
                     logsumexp, matmul, mean, relu, reshape, sqrt, transpose)
from .layers import (BatchNorm1d, Conv2d, DEFAULT_CONV_STACK, Dropout, Encoder, EncoderConfig, Linear,
                     MLP, Module, ReLU, Sequential, ShapeError, conv2d, dropout, forward)
from .optim import AdamW, NonFiniteGradient, OptState, adamw_step, ema_blend
from .gradcheck import max_relative_error, numerical_gradient

__all__ = [
    "AdamW", "BatchNorm1d", "Conv2d", "DEFAULT_CONV_STACK", "Dropout", "Encoder", "EncoderConfig",
    "GraphError", "Linear", "MLP", "Module", "NonFiniteGradient", "OptState", "Parameter", "ReLU",
    "Sequential", "ShapeError", "Tensor", "adamw_step", "backward", "concat", "conv2d", "dropout",
    "ema_blend", "exp", "forward", "l2_normalize", "log", "logsumexp", "matmul", "max_relative_error",
    "mean", "numerical_gradient", "relu", "reshape", "sqrt", "transpose",
]
