"""Scoring a model, the kNN baseline, or stored predictions on test pairs."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..errors import ConfigError
from ..imagery import SamplePair
from ..knn import KnnIndex
from ..metrics import DEFAULT_PARAMS, SsimParams, global_ssim, rmse, windowed_ssim
from ..models.layers import Module
from ..models.networks import predict
from ..reporting import ImageScore, MethodResult, MetricsReport

Predictor = Union[Module, KnnIndex, Callable]


def worker_count() -> int:
    """Worker cap from ``IR2VIS_THREADS`` (default: CPU count)."""
    env = os.environ.get("IR2VIS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"IR2VIS_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _is_stochastic(model) -> bool:
    spec = getattr(model, "spec", None)
    return bool(spec is not None and spec.generator and spec.dropout_p > 0)


def run_predictor(predictor: Predictor, ir: np.ndarray, passes: int = 1, seed: int = 0) -> tuple:
    """Return (predictions (N, 3, H, W), passes actually averaged)."""
    if isinstance(predictor, KnnIndex):
        return predictor.predict_batch(ir), 1
    if isinstance(predictor, Module):
        if not _is_stochastic(predictor):
            return predict(predictor, ir), 1
        acc = None
        for k in range(passes):
            out = predict(predictor, ir, rng=np.random.default_rng([seed, k])).astype(np.float64)
            acc = out if acc is None else acc + out
        return (acc / passes).astype(predictor.dtype), passes
    return np.concatenate([np.asarray(predictor(ir[i:i + 1])) for i in range(len(ir))], axis=0), 1


def score_image(pair: SamplePair, pred: np.ndarray, params: SsimParams = DEFAULT_PARAMS) -> ImageScore:
    target = pair.visible
    _, ssim = windowed_ssim(pred, target, params, pair.mask)
    return ImageScore(pair.id, ssim, global_ssim(pred, target, params), rmse(pred, target, pair.mask))


def score_predictions(pairs: Sequence[SamplePair], preds: Sequence[np.ndarray],
                      params: SsimParams = DEFAULT_PARAMS, passes: int = 1) -> MethodResult:
    if not pairs:
        raise ConfigError("evaluation needs at least one test pair")
    if any(p.visible is None for p in pairs):
        raise ConfigError("every test pair needs visible ground truth")
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        scores = list(pool.map(lambda ip: score_image(ip[0], ip[1][None] if ip[1].ndim == 3 else ip[1], params),
                               zip(pairs, preds)))
    return MethodResult(scores, passes, masked=any(p.mask is not None for p in pairs))


def evaluate(predictor: Predictor, test_pairs: Sequence[SamplePair], label: str = "model",
             params: SsimParams = DEFAULT_PARAMS, passes: int = 1, seed: int = 0) -> MetricsReport:
    """Per-image windowed SSIM, global SSIM and RMSE plus dataset means."""
    if not test_pairs:
        raise ConfigError("evaluation needs at least one test pair")
    if passes < 1:
        raise ConfigError("passes must be >= 1")
    ir = np.concatenate([p.ir for p in test_pairs], axis=0)
    preds, used = run_predictor(predictor, ir, passes, seed)
    return MetricsReport({label: score_predictions(test_pairs, list(preds), params, used)})
