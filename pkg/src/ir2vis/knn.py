"""Exact k-nearest-neighbour regression baseline.

A query IR image is compared to every training IR image by Euclidean
distance on the flattened normalized pixels; the prediction is the pixelwise
mean of the visible images of the k closest, ties broken by ascending id.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError


@dataclass(frozen=True)
class KnnIndex:
    ids: tuple
    features: np.ndarray   # (n, D) float64 flattened IR images
    targets: np.ndarray    # (n, 3, H, W) visible images
    k: int = 3
    metric: str = "euclidean"

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def image_shape(self) -> tuple:
        return self.targets.shape[1:]

    def neighbours(self, ir_query) -> np.ndarray:
        """Indices of the k nearest training items, nearest first."""
        q = np.asarray(ir_query, dtype=np.float64).reshape(-1)
        if q.size != self.features.shape[1]:
            raise DimensionError(
                f"query has {q.size} values, index expects {self.features.shape[1]} "
                f"(image shape {self.image_shape})")
        dist = ((self.features - q) ** 2).sum(axis=1)
        order = np.lexsort((self._id_rank, dist))
        return order[:self.k]

    @cached_property
    def _id_rank(self) -> np.ndarray:
        return np.argsort(np.argsort(np.array(self.ids, dtype=object)))

    def predict(self, ir_query) -> np.ndarray:
        """Mean visible image of the k neighbours, shape (1, 3, H, W)."""
        nb = self.neighbours(ir_query)
        mean = self.targets[nb].astype(np.float64).mean(axis=0)
        return mean.astype(self.targets.dtype)[None]

    def predict_batch(self, ir_batch) -> np.ndarray:
        return np.concatenate([self.predict(q) for q in np.asarray(ir_batch)], axis=0)


def fit(pairs: Sequence, k: int = 3) -> KnnIndex:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if len(pairs) < k:
        raise ConfigError(f"kNN needs at least k={k} training pairs, got {len(pairs)}")
    ids = [p.id for p in pairs]
    if len(set(ids)) != len(ids):
        raise ValidationError("kNN training set contains duplicate ids")
    if any(p.visible is None for p in pairs):
        raise ValidationError("every kNN training pair needs a visible target")
    shapes = {p.ir.shape for p in pairs}
    if len(shapes) != 1:
        raise DimensionError(f"training IR images differ in shape: {sorted(shapes)}")
    features = np.stack([p.ir.reshape(-1) for p in pairs]).astype(np.float64)
    targets = np.concatenate([p.visible for p in pairs], axis=0)
    return KnnIndex(tuple(ids), features, targets, k)


def predict(index: KnnIndex, ir_query) -> np.ndarray:
    return index.predict(ir_query)
