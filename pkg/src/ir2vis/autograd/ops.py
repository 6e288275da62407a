"""Differentiable NCHW operations used by the networks and the SSIM losses."""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError, TapeError
from .tensor import Tensor


def _check_rank4(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what} must be rank-4 (N, C, H, W), got shape {x.shape}")


# -- convolution -------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``weight`` is (out_ch, in_ch, k, k)."""
    _check_rank4(x, "conv2d input")
    _check_rank4(weight, "conv2d weight")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise DimensionError(f"conv2d: input channels (axis 1 of input) = {c} but weight in_ch (axis 1) = {ci}")
    if kh != kw:
        raise DimensionError(f"conv2d: kernel must be square, got axes 2,3 = {kh}x{kw}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != (out_ch,) = ({o},)")
    if stride < 1 or padding < 0:
        raise ContractError("conv2d: stride must be >= 1 and padding >= 0")
    k, s, p = kh, stride, padding
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: spatial axes (H, W) = ({h}, {w}) too small for kernel {k} with padding {p}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def _bw(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            cols = np.tensordot(g, weight.data, axes=([1], [0]))  # N, Ho, Wo, C, k, k
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, _bw, "conv2d")


def conv2d_backward(out: Tensor, grad_out: np.ndarray):
    """Gradients (input, weight, bias) of a recorded conv2d for ``grad_out``.

    Entries for inputs that do not require grad are None.
    """
    if out._op != "conv2d" or out._backward is None:
        raise TapeError("conv2d_backward: tensor has no recorded conv2d forward")
    if grad_out.shape != out.shape:
        raise DimensionError(f"conv2d_backward: grad shape {grad_out.shape} != output shape {out.shape}")
    return out._backward(grad_out)


# -- resampling ------------------------------------------------------------

def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    _check_rank4(x, "max_pool2d input")
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise DimensionError(f"max_pool2d: spatial axes ({h}, {w}) smaller than pool size {size}")
    blocks = (
        x.data[:, :, :ho * size, :wo * size]
        .reshape(n, c, ho, size, wo, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, size * size)
    )
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def _bw(g):
        onehot = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, :ho * size, :wo * size] = (
            onehot.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size)
        )
        return (gx,)

    return Tensor.from_op(out, (x,), _bw, "max_pool2d")


def upsample_nearest2x(x: Tensor) -> Tensor:
    _check_rank4(x, "upsample input")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def _bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), _bw, "upsample_nearest2x")


def concat_channels(*tensors: Tensor) -> Tensor:
    if len(tensors) == 1 and isinstance(tensors[0], (list, tuple)):
        tensors = tuple(tensors[0])
    for t in tensors:
        _check_rank4(t, "concat input")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != ref[0]:
            raise DimensionError(f"concat_channels: batch axis 0 differs ({t.shape[0]} vs {ref[0]})")
        if t.shape[2:] != ref[2:]:
            raise DimensionError(f"concat_channels: spatial axes (2, 3) differ ({t.shape[2:]} vs {ref[2:]})")
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return Tensor.from_op(out, tensors, _bw, "concat_channels")


def reflect_pad(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    _check_rank4(x, "reflect_pad input")
    n, c, h, w = x.shape
    if max(top, bottom) >= h or max(left, right) >= w:
        raise DimensionError(f"reflect_pad: padding ({top},{bottom},{left},{right}) too large for ({h}, {w})")
    rows = np.pad(np.arange(h), (top, bottom), mode="reflect")
    cols = np.pad(np.arange(w), (left, right), mode="reflect")
    out = x.data[:, :, rows][:, :, :, cols]

    def _bw(g):
        gr = np.zeros((n, c, h, g.shape[3]), dtype=g.dtype)
        np.add.at(gr, (slice(None), slice(None), rows), g)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), slice(None), cols), gr)
        return (gx,)

    return Tensor.from_op(out, (x,), _bw, "reflect_pad")


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    _check_rank4(x, "crop input")
    if top + height > x.shape[2] or left + width > x.shape[3]:
        raise DimensionError(f"crop window exceeds spatial axes {x.shape[2:]}")
    out = x.data[:, :, top:top + height, left:left + width]

    def _bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, top:top + height, left:left + width] = g
        return (gx,)

    return Tensor.from_op(out, (x,), _bw, "crop")


# -- elementwise ----------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor.from_op(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return Tensor.from_op(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return Tensor.from_op(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def log(x: Tensor) -> Tensor:
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient is passed only where no clipping occurred."""
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor.from_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def cast(x: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    if x.dtype == dtype:
        return x
    src = x.dtype
    return Tensor.from_op(x.data.astype(dtype), (x,), lambda g: (g.astype(src),), "cast")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None,
            stochastic_inference: bool = False) -> Tensor:
    """Inverted dropout.

    Active in training mode, or in inference mode when ``stochastic_inference``
    is set (the cGAN generator's noise source). Identity otherwise.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must lie in [0, 1), got {p}")
    if p == 0.0 or not (training or stochastic_inference):
        return x
    if rng is None:
        raise ContractError("dropout needs an rng when active")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return Tensor.from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, as is conventional).
    """
    _check_rank4(x, "batch_norm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    if training:
        m = x.data.size // c
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(c)
    else:
        m = None
        mu = running_mean.reshape(1, c, 1, 1).astype(x.dtype)
        var = running_var.reshape(1, c, 1, 1).astype(x.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd
    g4 = gamma.data.reshape(1, c, 1, 1)
    out = xhat * g4 + beta.data.reshape(1, c, 1, 1)

    def _bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * g4
        if training:
            gx = invstd * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                           - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = dxhat * invstd
        return gx, ggamma, gbeta

    return Tensor.from_op(out.astype(x.dtype), (x, gamma, beta), _bw, "batch_norm")


# -- windowed filtering --------------------------------------------------------

def _corr_valid(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    k = len(kernel)
    n_out = a.shape[axis] - k + 1
    out = None
    for j in range(k):
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(j, j + n_out)
        term = a[tuple(sl)] * kernel[j]
        out = term if out is None else out + term
    return out


def _corr_valid_adjoint(g: np.ndarray, kernel: np.ndarray, axis: int, n_in: int) -> np.ndarray:
    k = len(kernel)
    n_out = g.shape[axis]
    shape = list(g.shape)
    shape[axis] = n_in
    out = np.zeros(shape, dtype=g.dtype)
    for j in range(k):
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(j, j + n_out)
        out[tuple(sl)] += g * kernel[j]
    return out


def window_filter(x: Tensor, kernel1d: np.ndarray) -> Tensor:
    """Separable 'valid' correlation with ``outer(kernel1d, kernel1d)`` per channel.

    Output spatial dims are (H - k + 1, W - k + 1). Used for SSIM window statistics.
    """
    _check_rank4(x, "window_filter input")
    kernel = np.asarray(kernel1d, dtype=x.dtype)
    k = len(kernel)
    h, w = x.shape[2:]
    if h < k or w < k:
        raise DimensionError(f"window_filter: spatial axes ({h}, {w}) smaller than window {k}")
    out = _corr_valid(_corr_valid(x.data, kernel, 2), kernel, 3)

    def _bw(g):
        return (_corr_valid_adjoint(_corr_valid_adjoint(g, kernel, 3, w), kernel, 2, h),)

    return Tensor.from_op(out, (x,), _bw, "window_filter")
