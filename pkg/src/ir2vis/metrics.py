"""SSIM (global and windowed), masked SSIM and RMSE.

The windowed form slides a ``window_size`` window over valid positions only
(no padding), computes SSIM per channel and averages over channels, giving a
map of shape (N, 1, H - w + 1, W - w + 1). Masking removes every window that
contains an invalid target pixel before the spatial mean is taken.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import ops
from .autograd.tensor import Tensor
from .errors import DegenerateMaskError, DimensionError, ValidationError


@dataclass(frozen=True)
class SsimParams:
    L: float = 1.0
    window_size: int = 11
    window_kind: str = "uniform"
    sigma: float = 1.5

    def __post_init__(self):
        if not self.L > 0:
            raise ValidationError("SSIM dynamic range L must be positive")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValidationError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.window_kind not in ("uniform", "gaussian"):
            raise ValidationError(f"unknown window kind {self.window_kind!r}")

    @property
    def c1(self) -> float:
        return (0.01 * self.L) ** 2

    @property
    def c2(self) -> float:
        return (0.03 * self.L) ** 2

    @property
    def radius(self) -> int:
        return self.window_size // 2

    def kernel1d(self) -> np.ndarray:
        if self.window_kind == "uniform":
            return np.full(self.window_size, 1.0 / self.window_size)
        offs = np.arange(self.window_size) - self.radius
        g = np.exp(-(offs ** 2) / (2.0 * self.sigma ** 2))
        return g / g.sum()


DEFAULT_PARAMS = SsimParams()


@dataclass
class SsimMap:
    values: np.ndarray
    valid: np.ndarray

    @property
    def mean(self) -> float:
        if not self.valid.any():
            raise DegenerateMaskError("every SSIM window is masked; the spatial mean is undefined")
        return float(self.values[self.valid].mean(dtype=np.float64))


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _as_batch(x) -> np.ndarray:
    arr = _data(x)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise DimensionError(f"expected an image of shape (N, C, H, W) or (C, H, W), got {arr.shape}")
    return arr


def _check_same(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        axes = [i for i, (a, b) in enumerate(zip(x.shape, y.shape)) if a != b] or "rank"
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape} (axes {axes})")


def validity_batch(mask, shape: tuple) -> np.ndarray:
    """Normalize a mask (PixelMask, (H,W), (N,H,W) or (N,1,H,W)) to (N, 1, H, W) bool."""
    n, _, h, w = shape
    if mask is None:
        return np.ones((n, 1, h, w), dtype=bool)
    valid = np.asarray(getattr(mask, "valid", mask), dtype=bool)
    if valid.ndim == 2:
        valid = valid[None, None]
    elif valid.ndim == 3:
        valid = valid[:, None]
    if valid.shape[2:] != (h, w) or valid.shape[1] != 1 or valid.shape[0] not in (1, n):
        raise DimensionError(f"mask shape {valid.shape} does not align with images {shape}")
    return np.broadcast_to(valid, (n, 1, h, w))


# -- global form -----------------------------------------------------------------

def global_ssim_per_image(x, y, params: SsimParams = DEFAULT_PARAMS) -> np.ndarray:
    xa = _as_batch(x).astype(np.float64)
    ya = _as_batch(y).astype(np.float64)
    _check_same(xa, ya)
    axes = (1, 2, 3)
    mx, my = xa.mean(axis=axes), ya.mean(axis=axes)
    dx = xa - mx[:, None, None, None]
    dy = ya - my[:, None, None, None]
    vx, vy = (dx * dx).mean(axis=axes), (dy * dy).mean(axis=axes)
    cxy = (dx * dy).mean(axis=axes)
    c1, c2 = params.c1, params.c2
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def global_ssim(x, y, params: SsimParams = DEFAULT_PARAMS) -> float:
    """SSIM with statistics pooled over all pixels and channels (mean over a batch)."""
    return float(global_ssim_per_image(x, y, params).mean())


# -- windowed form -----------------------------------------------------------------

def ssim_map_tensor(x: Tensor, y: Tensor, params: SsimParams = DEFAULT_PARAMS) -> Tensor:
    """Differentiable channel-averaged local SSIM map, shape (N, 1, H', W')."""
    if x.shape != y.shape:
        _check_same(x.data, y.data)
    k = params.kernel1d()
    dtype = x.dtype
    c1, c2 = dtype.type(params.c1), dtype.type(params.c2)
    mx = ops.window_filter(x, k)
    my = ops.window_filter(y, k)
    mxx, myy, mxy = mx * mx, my * my, mx * my
    sxx = ops.window_filter(x * x, k) - mxx
    syy = ops.window_filter(y * y, k) - myy
    sxy = ops.window_filter(x * y, k) - mxy
    num = (mxy * 2.0 + c1) * (sxy * 2.0 + c2)
    den = (mxx + myy + c1) * (sxx + syy + c2)
    return (num / den).mean(axis=1)


def window_validity(mask, shape: tuple, params: SsimParams = DEFAULT_PARAMS) -> np.ndarray:
    """(N, 1, H', W') bool: True where the window holds no invalid target pixel."""
    valid = validity_batch(mask, shape)
    w = params.window_size
    if shape[2] < w or shape[3] < w:
        raise DimensionError(f"image {shape[2:]} smaller than SSIM window {w}")
    invalid = ~valid
    if not invalid.any():
        return np.ones((shape[0], 1, shape[2] - w + 1, shape[3] - w + 1), dtype=bool)
    counts = sliding_window_view(invalid, (w, w), axis=(2, 3)).sum(axis=(-2, -1))
    return counts == 0


def dilate_invalid(mask, radius: int = 5) -> np.ndarray:
    """Pixel-level (H, W) validity after growing invalid pixels by a Chebyshev radius."""
    valid = np.asarray(getattr(mask, "valid", mask), dtype=bool)
    h, w = valid.shape
    padded = np.pad(~valid, radius)
    grown = sliding_window_view(padded, (2 * radius + 1, 2 * radius + 1)).any(axis=(-2, -1))
    return ~grown[:h, :w]


def masked_mean_tensor(ssim_map: Tensor, window_valid: np.ndarray) -> Tensor:
    """Mean of ``ssim_map`` over valid windows pooled across the batch."""
    n_valid = int(window_valid.sum())
    if n_valid == 0:
        raise DegenerateMaskError("every SSIM window is masked; the spatial mean is undefined")
    if n_valid == window_valid.size:
        return ssim_map.mean()
    weights = window_valid.astype(ssim_map.dtype) / ssim_map.dtype.type(n_valid)
    return (ssim_map * weights).sum()


def windowed_ssim_tensor(pred: Tensor, target, params: SsimParams = DEFAULT_PARAMS, mask=None) -> Tensor:
    """Differentiable (masked) windowed SSIM mean; ``mask`` refers to the target."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    smap = ssim_map_tensor(pred, target, params)
    return masked_mean_tensor(smap, window_validity(mask, pred.shape, params))


def windowed_ssim(x, y, params: SsimParams = DEFAULT_PARAMS, mask=None):
    """Return (SsimMap, mean over valid windows). ``mask`` marks valid target pixels.

    Evaluation always runs in float64 whatever the input precision.
    """
    xa, ya = _as_batch(x).astype(np.float64), _as_batch(y).astype(np.float64)
    _check_same(xa, ya)
    h, w = xa.shape[2:]
    if h < params.window_size or w < params.window_size:
        raise DimensionError(f"image ({h}, {w}) smaller than SSIM window {params.window_size}")
    smap = ssim_map_tensor(Tensor(xa), Tensor(ya), params).data
    valid = window_validity(mask, xa.shape, params)
    result = SsimMap(smap, valid)
    return result, result.mean


def windowed_ssim_per_image(x, y, params: SsimParams = DEFAULT_PARAMS, mask=None) -> np.ndarray:
    result, _ = windowed_ssim(x, y, params, mask)
    out = np.empty(result.values.shape[0])
    for i in range(len(out)):
        v = result.valid[i]
        if not v.any():
            raise DegenerateMaskError(f"image {i}: every SSIM window is masked")
        out[i] = result.values[i][v].mean(dtype=np.float64)
    return out


def masked_ssim(pred, target, target_mask=None, params: SsimParams = DEFAULT_PARAMS) -> float:
    """Windowed SSIM ignoring windows that touch an invalid (dark) *target* pixel.

    Only the target's mask is consulted; dark predicted pixels never mask.
    """
    _, mean = windowed_ssim(pred, target, params, target_mask)
    return mean


def rmse(x, y, mask=None) -> float:
    """Root mean squared error over valid pixels and all channels."""
    if mask is None:
        xa, ya = np.asarray(_data(x), np.float64), np.asarray(_data(y), np.float64)
        _check_same(xa, ya)
        return float(np.sqrt(((xa - ya) ** 2).mean()))
    xa, ya = _as_batch(x).astype(np.float64), _as_batch(y).astype(np.float64)
    _check_same(xa, ya)
    sq = (xa - ya) ** 2
    valid = np.broadcast_to(validity_batch(mask, xa.shape), xa.shape)
    if not valid.any():
        raise DegenerateMaskError("rmse: every pixel is masked")
    return float(np.sqrt(sq[valid].mean()))
