"""Generator and discriminator losses."""
from __future__ import annotations

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..errors import ContractError, DimensionError
from ..metrics import DEFAULT_PARAMS, SsimParams, windowed_ssim_tensor

EPS = 1e-7


def _as_tensor(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=like.dtype))


def ssim_loss(pred: Tensor, target, mask=None, params: SsimParams = DEFAULT_PARAMS) -> Tensor:
    """1 - windowed SSIM mean, skipping windows that touch an invalid target pixel."""
    return 1.0 - windowed_ssim_tensor(pred, _as_tensor(target, pred), params, mask)


def l1_loss(pred: Tensor, target) -> Tensor:
    target = _as_tensor(target, pred)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    return ops.tabs(pred - target).mean()


def discriminator_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-mean log D(y|x) - mean log(1 - D(G(z|x)|x)) over all patch positions."""
    real = ops.clamp(d_real, EPS, 1 - EPS)
    fake = ops.clamp(d_fake, EPS, 1 - EPS)
    return -(ops.log(real).mean() + ops.log(1.0 - fake).mean())


def generator_adversarial_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating form: -mean log D(G(z|x)|x)."""
    return -ops.log(ops.clamp(d_fake, EPS, 1 - EPS)).mean()


def gan_losses(d_real, d_fake):
    """Return ``(d_loss, g_adv_loss)`` for discriminator score maps in (0, 1)."""
    d_real = d_real if isinstance(d_real, Tensor) else Tensor(np.asarray(d_real, dtype=np.float64))
    d_fake = _as_tensor(d_fake, d_real)
    return discriminator_loss(d_real, d_fake), generator_adversarial_loss(d_fake)


def composite_generator_loss(g_adv, l1, ssim_l, lam: float, mu_w: float):
    """g_adv + lam * l1 + mu_w * ssim_l.

    Tensor terms are promoted to float64 first, so a logged total recomputed
    in Python from the logged float terms matches bit for bit.
    """
    if lam < 0 or mu_w < 0:
        raise ContractError("loss weights must be non-negative")
    if isinstance(g_adv, Tensor):
        g_adv, l1, ssim_l = (ops.cast(t, np.float64) for t in (g_adv, l1, ssim_l))
    return g_adv + lam * l1 + mu_w * ssim_l
