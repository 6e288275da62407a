"""Parameter containers and layers built on the autograd ops."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor


class Module:
    """Registers parameters, buffers and sub-modules in attribute order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> "Module":
        setattr(self, name, module)
        return module

    def named_parameters(self, prefix: str = "") -> Iterator:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())
        state.update((n, b.copy()) for n, b in self.named_buffers())
        return state

    def load_state_dict(self, state) -> None:
        from ..errors import CheckpointError

        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        unexpected = set(state) - set(params) - set(buffers)
        if missing or unexpected:
            raise CheckpointError(f"state keys differ: missing {sorted(missing)[:5]}, unexpected {sorted(unexpected)[:5]}")
        for name, arr in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != arr.shape:
                raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {target.shape}")
            if name in params:
                params[name].data = np.array(arr, dtype=target.dtype)
            else:
                target[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def init_weight(shape, init: str, rng: np.random.Generator, dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    if init == "gaussian":
        w = rng.normal(0.0, 0.02, size=shape)
    elif init == "kaiming":
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    return w.astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0, *,
                 rng: np.random.Generator, init: str = "kaiming", dtype=np.float32, bias: bool = True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = Tensor(init_weight((out_ch, in_ch, kernel, kernel), init, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator, stochastic_inference: bool = False):
        super().__init__()
        self.p = p
        self.rng = rng
        self.stochastic_inference = stochastic_inference

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return ops.dropout(x, self.p, self.training, rng or self.rng, self.stochastic_inference)


class ConvBlock(Module):
    """conv3x3 -> [BN] -> ReLU -> conv3x3 -> BN -> ReLU."""

    def __init__(self, in_ch: int, out_ch: int, *, rng, init: str, dtype, first_norm: bool = True):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, padding=1, rng=rng, init=init, dtype=dtype)
        self.norm1 = BatchNorm2d(out_ch, dtype) if first_norm else None
        self.conv2 = Conv2d(out_ch, out_ch, 3, padding=1, rng=rng, init=init, dtype=dtype)
        self.norm2 = BatchNorm2d(out_ch, dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(x)
        if self.norm1 is not None:
            h = self.norm1(h)
        h = ops.relu(h)
        return ops.relu(self.norm2(self.conv2(h)))


class UpConv(Module):
    """Nearest 2x upsample followed by conv3x3 -> BN -> ReLU (resize-convolution)."""

    def __init__(self, in_ch: int, out_ch: int, *, rng, init: str, dtype):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 3, padding=1, rng=rng, init=init, dtype=dtype)
        self.norm = BatchNorm2d(out_ch, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.norm(self.conv(ops.upsample_nearest2x(x))))


class OutputHead(Module):
    """1x1 conv to the output channels followed by a sigmoid."""

    def __init__(self, in_ch: int, out_ch: int, *, rng, init: str, dtype):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 1, rng=rng, init=init, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.conv(x))
