"""Checkpoints: one IVT1 file per tensor plus a JSON spec sidecar.

Layout of a checkpoint directory::

    model.json            {"spec": {...}, "dtype": ..., "tensors": {name: file}, "meta": {...}}
    tensors/<name>.ivt    parameters and normalization buffers
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from ..autograd.ivt import read_ivt, write_ivt
from ..errors import CheckpointError
from .layers import Module
from .networks import ModelSpec, build_model

SIDECAR = "model.json"


def _as4(arr: np.ndarray) -> np.ndarray:
    return arr.reshape((1,) * (4 - arr.ndim) + arr.shape) if arr.ndim < 4 else arr


def save_checkpoint(path, model: Module, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    files, shapes = {}, {}
    for name, arr in model.state_dict().items():
        fname = f"tensors/{name}.ivt"
        write_ivt(path / fname, _as4(arr))
        files[name] = fname
        shapes[name] = list(arr.shape)
    doc = {"spec": model.spec.to_json(), "dtype": str(model.dtype), "tensors": files,
           "shapes": shapes, "meta": meta or {}}
    (path / SIDECAR).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return path


def read_sidecar(path) -> dict:
    side = Path(path) / SIDECAR
    if not side.exists():
        raise FileNotFoundError(f"no checkpoint sidecar at {side}")
    return json.loads(side.read_text(encoding="utf-8"))


def load_checkpoint(path, spec: Optional[ModelSpec] = None) -> Module:
    """Rebuild the model from the sidecar (or ``spec``) and load its tensors.

    Passing a ``spec`` that does not match the stored tensors raises CheckpointError.
    """
    path = Path(path)
    doc = read_sidecar(path)
    stored = ModelSpec.from_json(doc["spec"])
    model = build_model(spec or stored, np.dtype(doc.get("dtype", "float32")))
    state = {}
    for name, fname in doc["tensors"].items():
        arr = read_ivt(path / fname)
        state[name] = arr.reshape(doc["shapes"][name])
    try:
        model.load_state_dict(state)
    except CheckpointError as exc:
        raise CheckpointError(f"checkpoint {path} is incompatible with the model spec: {exc}") from exc
    model.eval()
    return model
