"""Minimal reverse-mode autodiff over NCHW tensors."""
from .ivt import read_ivt, write_ivt
from .ops import (
    batch_norm,
    cast,
    clamp,
    concat_channels,
    conv2d,
    conv2d_backward,
    crop,
    dropout,
    leaky_relu,
    log,
    max_pool2d,
    reflect_pad,
    relu,
    sigmoid,
    sqrt,
    tabs,
    tanh,
    upsample_nearest2x,
    window_filter,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tape, Tensor, backward, grad_enabled, no_grad

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "adam_step", "backward", "batch_norm", "cast", "clamp",
    "concat_channels", "conv2d", "conv2d_backward", "crop", "dropout", "grad_enabled", "leaky_relu", "log",
    "max_pool2d", "no_grad", "read_ivt", "reflect_pad", "relu", "sigmoid", "sqrt", "tabs", "tanh",
    "upsample_nearest2x", "window_filter", "write_ivt",
]
