"""The three training recipes: U-Net, U-Net++ and the conditional GAN."""
from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from ..autograd.optim import Adam
from ..autograd.tensor import Tensor, backward, no_grad
from ..errors import ConfigError, DivergenceError
from ..imagery import SamplePair, stack_images, stack_masks
from ..metrics import rmse, windowed_ssim_per_image
from ..models.networks import PatchGAN, UNet, UNetPlusPlus, discriminate, predict
from .config import TrainConfig
from .log import TrainLog
from .losses import (
    composite_generator_loss,
    discriminator_loss,
    generator_adversarial_loss,
    l1_loss,
    ssim_loss,
)

logger = logging.getLogger(__name__)

# Divergence guard: discriminator loss below this for this many consecutive D steps.
D_COLLAPSE_LOSS = 1e-4
D_COLLAPSE_STEPS = 100

CheckpointFn = Callable[[int, dict], None]


def _require(pairs: Sequence[SamplePair], recipe: str) -> None:
    if not pairs:
        raise ConfigError(f"{recipe}: empty training set after filtering")
    if any(p.visible is None for p in pairs):
        raise ConfigError(f"{recipe}: every training pair needs a visible target")


def _arrays(pairs, dtype):
    return stack_images(pairs, "ir", dtype), stack_images(pairs, "visible", dtype), stack_masks(pairs)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def score_model(model, pairs: Sequence[SamplePair], cfg: TrainConfig, rng=None) -> tuple:
    """(mean windowed SSIM, mean RMSE) of ``model`` on ``pairs``, masks honoured."""
    x, y, m = _arrays(pairs, model.dtype)
    pred = predict(model, x, rng=rng)
    ssim = windowed_ssim_per_image(pred, y, cfg.ssim, m)
    errs = [rmse(pred[i:i + 1], y[i:i + 1], None if m is None else m[i]) for i in range(len(pairs))]
    return float(ssim.mean()), float(np.mean(errs))


def _maybe_checkpoint(cfg: TrainConfig, epoch: int, checkpoint_fn, models: dict) -> None:
    if checkpoint_fn is not None and cfg.ckpt_every and (epoch + 1) % cfg.ckpt_every == 0:
        checkpoint_fn(epoch, models)


def train_unet(model: UNet, data: Sequence[SamplePair], cfg: TrainConfig,
               val_data: Optional[Sequence[SamplePair]] = None, log: Optional[TrainLog] = None,
               checkpoint_fn: Optional[CheckpointFn] = None):
    """Adam at a constant rate on the unmasked SSIM loss, early stopping on validation SSIM.

    Validation falls back to the training pairs when ``val_data`` is None.
    The returned model carries the parameters of the best validation epoch.
    """
    _require(data, "unet")
    log = log if log is not None else TrainLog()
    val = list(val_data) if val_data else list(data)
    x_all, y_all, _ = _arrays(data, model.dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    epochs, batch_size = cfg.stages[0]
    best_ssim, best_state, bad = -np.inf, model.state_dict(), 0
    done = False
    for epoch in range(epochs):
        model.train()
        for idx in _batches(len(data), batch_size, rng):
            pred = model(Tensor(x_all[idx]))
            loss = ssim_loss(pred, y_all[idx], None, cfg.ssim)
            opt.zero_grad()
            backward(loss)
            opt.step()
            log.step("U", epoch=epoch, loss=loss.item())
            if cfg.max_steps is not None and log.n_steps >= cfg.max_steps:
                done = True
                break
        val_ssim, val_rmse = score_model(model, val, cfg)
        log.append("epoch", epoch=epoch, lr=cfg.lr, val_ssim=val_ssim, val_rmse=val_rmse)
        if val_ssim > best_ssim:
            best_ssim, best_state, bad = val_ssim, model.state_dict(), 0
        else:
            bad += 1
        _maybe_checkpoint(cfg, epoch, checkpoint_fn, {"model": model})
        if bad >= cfg.patience:
            log.append("event", event="early_stop", epoch=epoch, best_val_ssim=best_ssim)
            break
        if done:
            break
    model.load_state_dict(best_state)
    log.append("event", event="restore_best", best_val_ssim=best_ssim)
    model.eval()
    return model, log


def train_unetpp(model: UNetPlusPlus, data: Sequence[SamplePair], cfg: TrainConfig,
                 val_data: Optional[Sequence[SamplePair]] = None, log: Optional[TrainLog] = None,
                 checkpoint_fn: Optional[CheckpointFn] = None):
    """Staged (epochs_i, batch_i) schedule on the masked SSIM loss.

    With deep supervision the per-head losses are averaged uniformly.
    """
    _require(data, "unetpp")
    log = log if log is not None else TrainLog()
    x_all, y_all, m_all = _arrays(data, model.dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    epoch = 0
    done = False
    for stage, (epochs, batch_size) in enumerate(cfg.stages):
        log.append("stage", stage=stage, cumulative_epoch=epoch, batch_size=batch_size, epochs=epochs)
        for _ in range(epochs):
            model.train()
            for idx in _batches(len(data), batch_size, rng):
                mask = None if m_all is None else m_all[idx]
                heads = model.forward_heads(Tensor(x_all[idx]))
                terms = [ssim_loss(h, y_all[idx], mask, cfg.ssim) for h in heads]
                loss = terms[0] if len(terms) == 1 else sum(terms[1:], terms[0]) * (1.0 / len(terms))
                opt.zero_grad()
                backward(loss)
                opt.step()
                log.step("U", epoch=epoch, stage=stage, loss=loss.item())
                if cfg.max_steps is not None and log.n_steps >= cfg.max_steps:
                    done = True
                    break
            rec = {"epoch": epoch, "stage": stage, "lr": cfg.lr}
            if val_data:
                rec["val_ssim"], rec["val_rmse"] = score_model(model, val_data, cfg)
            log.append("epoch", **rec)
            _maybe_checkpoint(cfg, epoch, checkpoint_fn, {"model": model})
            epoch += 1
            if done:
                break
        if done:
            break
    model.eval()
    return model, log


def train_cgan(G: UNet, D: PatchGAN, data: Sequence[SamplePair], cfg: TrainConfig,
               val_data: Optional[Sequence[SamplePair]] = None, log: Optional[TrainLog] = None,
               checkpoint_fn: Optional[CheckpointFn] = None):
    """Alternate ``d_steps_per_g_step`` discriminator updates with one generator update.

    Both optimizers use lr0 * decay**epoch. The generator minimises
    g_adv + lam * L1 + mu_w * (1 - SSIM). ``cfg.max_steps`` counts generator steps.
    """
    _require(data, "cgan")
    log = log if log is not None else TrainLog()
    x_all, y_all, _ = _arrays(data, G.dtype)
    rng = np.random.default_rng(cfg.seed)
    opt_g = Adam(G.named_parameters(), lr=cfg.lr)
    opt_d = Adam(D.named_parameters(), lr=cfg.lr)
    epochs, batch_size = cfg.stages[0] if len(cfg.stages) == 1 else (cfg.total_epochs, cfg.stages[0][1])
    low_d = 0
    g_steps = 0
    done = False
    for epoch in range(epochs):
        lr = cfg.lr_at(epoch)
        opt_g.lr = opt_d.lr = lr
        G.train()
        D.train()
        for idx in _batches(len(data), batch_size, rng):
            x, y = Tensor(x_all[idx]), Tensor(y_all[idx])
            for _ in range(cfg.d_steps_per_g_step):
                with no_grad():
                    fake = G(x)
                d_loss = discriminator_loss(discriminate(D, x, y), discriminate(D, x, fake))
                opt_d.zero_grad()
                backward(d_loss)
                opt_d.step()
                value = d_loss.item()
                log.step("D", epoch=epoch, d_loss=value)
                low_d = low_d + 1 if value < D_COLLAPSE_LOSS else 0
                if low_d >= D_COLLAPSE_STEPS:
                    log.append("event", event="divergence", epoch=epoch, step=log.n_steps)
                    raise DivergenceError(
                        f"discriminator loss < {D_COLLAPSE_LOSS} for {D_COLLAPSE_STEPS} consecutive steps "
                        f"(epoch {epoch}, step {log.n_steps}): discriminator collapse")
            fake = G(x)
            g_adv = generator_adversarial_loss(discriminate(D, x, fake))
            l1 = l1_loss(fake, y)
            s_loss = ssim_loss(fake, y, None, cfg.ssim)
            total = composite_generator_loss(g_adv, l1, s_loss, cfg.lam, cfg.mu_w)
            opt_g.zero_grad()
            backward(total)
            opt_g.step()
            log.step("G", epoch=epoch, g_total=total.item(), g_adv=g_adv.item(), l1=l1.item(),
                     ssim=s_loss.item())
            g_steps += 1
            if cfg.max_steps is not None and g_steps >= cfg.max_steps:
                done = True
                break
        rec = {"epoch": epoch, "lr": lr}
        if val_data:
            rec["val_ssim"], rec["val_rmse"] = score_model(G, val_data, cfg,
                                                           rng=np.random.default_rng([cfg.seed, epoch]))
        log.append("epoch", **rec)
        _maybe_checkpoint(cfg, epoch, checkpoint_fn, {"generator": G, "discriminator": D})
        if done:
            break
    G.eval()
    D.eval()
    return G, D, log
