"""IVT1 raw tensor files.

Layout: b"IVT1", one dtype byte (0 = float32, 1 = float64), four
little-endian uint32 dims (N, C, H, W), then the row-major little-endian payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ValidationError

MAGIC = b"IVT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_HEADER = struct.Struct("<4sB4I")


def encode_ivt(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim != 4:
        raise ValidationError(f"IVT1 stores rank-4 tensors, got shape {arr.shape}")
    code = _CODES.get(np.dtype(arr.dtype.name)) if arr.dtype.kind == "f" else None
    if code is None:
        raise ValidationError(f"IVT1 supports float32/float64, got {arr.dtype}")
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    return _HEADER.pack(MAGIC, code, *arr.shape) + payload


def decode_ivt(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise ValidationError("IVT1 buffer shorter than header")
    magic, code, *dims = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValidationError(f"bad IVT1 magic {magic!r}")
    if code not in _DTYPES:
        raise ValidationError(f"unknown IVT1 dtype code {code}")
    dtype = _DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = buf[_HEADER.size:]
    if len(payload) != expected:
        raise ValidationError(f"IVT1 payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_ivt(path, array) -> None:
    Path(path).write_bytes(encode_ivt(array))


def read_ivt(path) -> np.ndarray:
    return decode_ivt(Path(path).read_bytes())
