from .core import (GradientTape, Tensor, add, as_tensor, backward, clip01, concat, div, elementwise,
                   elu, get_tape, getitem, maximum, mean, mul, no_grad, reciprocal, reshape, sigmoid,
                   square, stack, sub, tabs, tanh, tmax, tsum, where)
from .io import dumps_tensor, load_tensor, loads_tensor, read_tensor, save_tensor
from .kernels import BACKEND
from .nn import avg_pool3, bilinear_sample, conv2d, pad_reflect, upsample2x
from .optim import Adam, AdamState, adam_step

__all__ = [
    "BACKEND", "Adam", "AdamState", "GradientTape", "Tensor", "adam_step", "add", "as_tensor",
    "avg_pool3", "backward", "bilinear_sample", "clip01", "concat", "conv2d", "div", "dumps_tensor",
    "elementwise", "elu", "get_tape", "getitem", "load_tensor", "loads_tensor", "maximum", "mean",
    "mul", "no_grad", "pad_reflect", "read_tensor", "reciprocal", "reshape", "save_tensor",
    "sigmoid", "square", "stack", "sub", "tabs", "tanh", "tmax", "tsum", "upsample2x", "where",
]
