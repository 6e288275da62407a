"""Paired IR / visible composites: loading, dark-image filters, masks and splits.

Images are held as float32 arrays of shape (1, 3, H, W) with values in [0, 1].
Raw 8-bit PNG values are divided by the manifest's ``l_raw`` (255 by default);
IVT1 files are taken as already normalized, and any NaN they contain marks an
invalid pixel.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .autograd.ivt import read_ivt, write_ivt
from .errors import ConfigError, ValidationError

SPLITS = ("train", "val", "test", "deploy")
DEFAULT_SIZE = 127

# Dark pixel: 3-channel raw sum below 5 of 765, i.e. normalized sum below 5/255.
DARK_SUM_RAW = 5
DARK_SCALE = 255
# Decision thresholds as exact fractions (numerator, denominator).
STRATEGY_A_BLACK = (99, 100)
STRATEGY_B_NONZERO = (80, 100)
STRATEGY_C_DARK = (2, 1000)


@dataclass
class PixelMask:
    """Boolean validity map (H, W); False marks a pixel excluded from metrics."""

    valid: np.ndarray

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.ndim != 2:
            raise ValidationError(f"PixelMask must be 2-D (H, W), got shape {self.valid.shape}")

    @classmethod
    def all_valid(cls, height: int, width: int) -> "PixelMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def shape(self) -> tuple:
        return self.valid.shape

    @property
    def invalid_count(self) -> int:
        return int((~self.valid).sum())

    @property
    def is_all_valid(self) -> bool:
        return bool(self.valid.all())


@dataclass
class SamplePair:
    id: str
    timestamp: dt.datetime
    ir: np.ndarray
    visible: Optional[np.ndarray] = None
    mask: Optional[PixelMask] = None
    split: Optional[str] = None

    def __post_init__(self):
        if self.ir.ndim != 4 or self.ir.shape[:2] != (1, 3):
            raise ValidationError(f"{self.id}: IR image must be 1x3xHxW, got {self.ir.shape}")
        if self.visible is not None and self.visible.shape != self.ir.shape:
            raise ValidationError(f"{self.id}: visible shape {self.visible.shape} != IR shape {self.ir.shape}")
        if self.mask is not None and self.mask.shape != self.ir.shape[2:]:
            raise ValidationError(f"{self.id}: mask shape {self.mask.shape} != image size {self.ir.shape[2:]}")

    @property
    def size(self) -> tuple:
        return self.ir.shape[2:]


@dataclass
class ManifestRecord:
    id: str
    ir_path: str
    visible_path: Optional[str]
    timestamp: dt.datetime
    split: Optional[str] = None

    def to_json(self) -> dict:
        return {"id": self.id, "ir": self.ir_path, "vis": self.visible_path,
                "ts": format_ts(self.timestamp), "split": self.split}


@dataclass
class DatasetManifest:
    records: list
    l_raw: float = 255.0
    root: Path = field(default_factory=Path)
    size: Optional[int] = None

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValidationError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if rec.split is not None and rec.split not in SPLITS:
                raise ValidationError(f"{rec.id}: unknown split {rec.split!r}")

    def __len__(self) -> int:
        return len(self.records)

    def by_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p


# -- timestamps -------------------------------------------------------------

def parse_ts(text: str) -> dt.datetime:
    ts = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc)


def format_ts(ts: dt.datetime) -> str:
    return ts.astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- manifests ----------------------------------------------------------------

def load_manifest(path) -> DatasetManifest:
    """Read a manifest: a JSON array of records, or ``{"l_raw", "size", "records"}``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FileNotFoundError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from exc
    l_raw, size = 255.0, None
    if isinstance(doc, dict):
        l_raw = float(doc.get("l_raw", 255.0))
        size = doc.get("size")
        doc = doc.get("records", [])
    if not isinstance(doc, list):
        raise ValidationError(f"manifest {path} must hold a list of records")
    records = []
    for i, item in enumerate(doc):
        try:
            records.append(ManifestRecord(
                id=str(item["id"]), ir_path=item["ir"], visible_path=item.get("vis"),
                timestamp=parse_ts(item["ts"]), split=item.get("split"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"manifest {path}: record {i} is malformed ({exc})") from exc
    return DatasetManifest(records, l_raw=l_raw, root=path.parent, size=size)


def save_manifest(manifest: DatasetManifest, path, relative_to=None) -> None:
    """Write ``manifest``; paths are rewritten relative to the new file's directory."""
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    recs = []
    for rec in manifest.records:
        item = rec.to_json()
        item["ir"] = _relpath(manifest.resolve(rec.ir_path), base)
        if rec.visible_path is not None:
            item["vis"] = _relpath(manifest.resolve(rec.visible_path), base)
        recs.append(item)
    doc = recs
    if manifest.l_raw != 255.0 or manifest.size is not None:
        doc = {"l_raw": manifest.l_raw, "size": manifest.size, "records": recs}
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")


def _relpath(p: Path, base: Path) -> str:
    return os.path.relpath(p.resolve(), base.resolve())


# -- image IO ----------------------------------------------------------------

def read_image(path, l_raw: float = 255.0):
    """Return ((1, 3, H, W) float32 in [0, 1], invalid-pixel mask or None)."""
    path = Path(path)
    if path.suffix.lower() in (".ivt", ".ivt1"):
        arr = read_ivt(path).astype(np.float32)
        if arr.ndim != 4 or arr.shape[:2] != (1, 3):
            raise ValidationError(f"{path}: IVT1 image must be 1x3xHxW, got {arr.shape}")
        nan = np.isnan(arr)
        mask = None
        if nan.any():
            mask = PixelMask(~nan.any(axis=(0, 1)))
            arr = np.where(nan, 0.0, arr).astype(np.float32)
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError(f"{path}: IVT1 values must already lie in [0, 1]")
        return arr, mask
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    arr = (rgb / np.float32(l_raw)).transpose(2, 0, 1)[None]
    return np.ascontiguousarray(arr, dtype=np.float32), None


def save_png(path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.ndim == 4:
        arr = arr[0]
    u8 = np.clip(np.rint(arr.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def save_ivt_image(path, image: np.ndarray, mask: Optional[PixelMask] = None) -> None:
    arr = np.array(image, dtype=np.float32).reshape((1,) + np.asarray(image).shape[-3:])
    if mask is not None:
        arr[:, :, ~mask.valid] = np.nan
    write_ivt(path, arr)


def load_pair(record: ManifestRecord, manifest: Optional[DatasetManifest] = None) -> SamplePair:
    l_raw = manifest.l_raw if manifest else 255.0
    resolve = manifest.resolve if manifest else Path
    try:
        ir, _ = read_image(resolve(record.ir_path), l_raw)
        vis, mask = (None, None)
        if record.visible_path is not None:
            vis, mask = read_image(resolve(record.visible_path), l_raw)
    except OSError as exc:
        raise OSError(f"record {record.id}: {exc}") from exc
    if vis is None and record.split != "deploy":
        raise ValidationError(f"record {record.id}: visible image required for split {record.split!r}")
    if manifest is not None and manifest.size is not None and ir.shape[2:] != (manifest.size, manifest.size):
        raise ValidationError(f"record {record.id}: size {ir.shape[2:]} != declared {manifest.size}")
    if vis is not None and vis.shape != ir.shape:
        raise ValidationError(f"record {record.id}: IR {ir.shape[2:]} and visible {vis.shape[2:]} differ")
    return SamplePair(record.id, record.timestamp, ir, vis, mask, record.split)


def load_pairs(manifest: DatasetManifest, split: Optional[str] = None) -> list:
    recs = manifest.records if split is None else manifest.by_split(split)
    return [load_pair(r, manifest) for r in recs]


# -- dark / black pixel filters ----------------------------------------------

def _visible(pair_or_image) -> np.ndarray:
    vis = pair_or_image.visible if isinstance(pair_or_image, SamplePair) else pair_or_image
    if vis is None:
        raise ValidationError("filter needs a visible image")
    vis = np.asarray(vis)
    return vis[0] if vis.ndim == 4 else vis


def classify_dark_pixels(visible) -> PixelMask:
    """Mask with dark pixels invalid: channel sum below 5/255 (5 of 765 raw)."""
    vis = _visible(visible).astype(np.float64)
    # tolerance absorbs float32 rounding of k/255 so raw sum 5 stays on the not-dark side
    dark = vis.sum(axis=0) * DARK_SCALE < DARK_SUM_RAW - 1e-6
    return PixelMask(~dark)


def dark_pixel_count(visible) -> int:
    return classify_dark_pixels(visible).invalid_count


def black_pixel_count(visible) -> int:
    return int(np.all(_visible(visible) == 0.0, axis=0).sum())


def nonzero_entry_count(visible) -> int:
    return int(np.count_nonzero(_visible(visible)))


def filter_strategy_a(pair) -> bool:
    """Keep unless more than 99% of pixels are black (all channels exactly zero)."""
    vis = _visible(pair)
    total = vis.shape[1] * vis.shape[2]
    num, den = STRATEGY_A_BLACK
    return not black_pixel_count(vis) * den > num * total


def filter_strategy_b(pair) -> bool:
    """Keep iff more than 80% of the 3*H*W scalar entries are non-zero."""
    vis = _visible(pair)
    num, den = STRATEGY_B_NONZERO
    return nonzero_entry_count(vis) * den > num * vis.size


def filter_strategy_c(pair: SamplePair):
    """Drop if more than 0.2% of pixels are dark, else attach the dark mask.

    Returns ``(keep, pair)``; the pair is a copy carrying the mask when kept, and
    None when dropped.
    """
    mask = classify_dark_pixels(pair)
    h, w = mask.shape
    num, den = STRATEGY_C_DARK
    if mask.invalid_count * den > num * h * w:
        return False, None
    return True, dataclasses.replace(pair, mask=mask)


def is_nighttime(pair) -> bool:
    return not filter_strategy_a(pair)


def apply_filter(pairs: Iterable[SamplePair], strategy: str):
    """Return (kept pairs, dropped ids) for strategy 'a', 'b' or 'c'."""
    strategy = strategy.lower()
    if strategy not in ("a", "b", "c"):
        raise ConfigError(f"unknown filter strategy {strategy!r}")
    kept, dropped = [], []
    for pair in pairs:
        if strategy == "c":
            keep, out = filter_strategy_c(pair)
        else:
            keep = (filter_strategy_a if strategy == "a" else filter_strategy_b)(pair)
            out = pair
        (kept if keep else dropped).append(out if keep else pair.id)
    return kept, dropped


# -- date splits ----------------------------------------------------------------

def _as_date(b) -> dt.date:
    if isinstance(b, dt.datetime):
        return b.astimezone(dt.timezone.utc).date()
    if isinstance(b, dt.date):
        return b
    return dt.date.fromisoformat(str(b))


def assign_split(ts: dt.datetime, boundaries: Sequence[dt.date], gaps: Sequence[int]) -> Optional[str]:
    labels = ("train", "test") if len(boundaries) == 1 else ("train", "val", "test")
    day = ts.astimezone(dt.timezone.utc).date()
    for i, (b, gap) in enumerate(zip(boundaries, gaps)):
        if day <= b:
            return None if day > b - dt.timedelta(days=gap) else labels[i]
    return labels[len(boundaries)]


def split_by_date(manifest: DatasetManifest, boundaries, gap_days=14) -> DatasetManifest:
    """Assign train/(val)/test by date, dropping records just before each boundary.

    A boundary is the last calendar day (UTC) of the earlier split. Records
    dated within the ``gap_days`` days ending on the boundary (inclusive) are
    removed. One boundary gives train/test, two give train/val/test.
    Deploy records (no ground truth) are kept untouched.
    """
    bounds = [_as_date(b) for b in boundaries]
    if not 1 <= len(bounds) <= 2:
        raise ConfigError("split_by_date takes one or two boundaries")
    gaps = list(gap_days) if isinstance(gap_days, (list, tuple)) else [gap_days] * len(bounds)
    if len(gaps) != len(bounds) or any(g < 0 for g in gaps):
        raise ConfigError("gap_days must be a non-negative int or one per boundary")
    for (b0, b1), g1 in zip(zip(bounds, bounds[1:]), gaps[1:]):
        if b1 <= b0 or b1 - dt.timedelta(days=g1) < b0:
            raise ConfigError(f"overlapping split boundaries {b0} and {b1} (gap {g1} days)")
    out = []
    for rec in manifest.records:
        if rec.split == "deploy":
            out.append(rec)
            continue
        label = assign_split(rec.timestamp, bounds, gaps)
        if label is not None:
            out.append(dataclasses.replace(rec, split=label))
    return DatasetManifest(out, l_raw=manifest.l_raw, root=manifest.root, size=manifest.size)


# -- synthetic corpus -----------------------------------------------------------

def _smooth_field(rng: np.random.Generator, size: int) -> np.ndarray:
    f = np.zeros((size, size))
    for sigma, weight in ((size / 6.0, 1.0), (size / 14.0, 0.6), (size / 32.0, 0.3)):
        f += weight * gaussian_filter(rng.standard_normal((size, size)), max(sigma, 0.8), mode="wrap")
    f -= f.min()
    return f / max(f.max(), 1e-12)


def ir_to_visible(ir: np.ndarray) -> np.ndarray:
    """The fixed pointwise mapping used by :func:`synth_dataset` (no noise)."""
    cloud, water, surface = ir[0], ir[1], ir[2]
    bright = 1.0 / (1.0 + np.exp(-10.0 * (cloud - 0.45)))
    r = 0.05 + 0.85 * bright + 0.10 * surface * (1.0 - bright)
    g = 0.08 + 0.80 * bright + 0.12 * water * (1.0 - bright)
    b = 0.15 + 0.75 * bright + 0.05 * (1.0 - water)
    return np.stack([r, g, b])


def synth_dataset(n: int, size: int = DEFAULT_SIZE, seed: int = 0,
                  start: dt.datetime = dt.datetime(2019, 11, 1, tzinfo=dt.timezone.utc),
                  step: dt.timedelta = dt.timedelta(hours=12), noise: float = 0.02,
                  night_fraction: float = 0.0, dark_patch_fraction: float = 0.0, patch: int = 5) -> list:
    """Deterministic cloud-like IR/visible pairs.

    IR channels are smooth random fields (cloud opacity, moisture, surface
    temperature); the visible composite is :func:`ir_to_visible` of the IR
    plus low-amplitude smoothed noise, clipped to [0, 1].

    ``night_fraction`` of the pairs get an all-black visible image and
    ``dark_patch_fraction`` get one black ``patch`` x ``patch`` square. These
    draws use their own stream, so the daylight images do not depend on them.
    """
    if n < 1:
        raise ConfigError("synth_dataset needs n >= 1")
    rng = np.random.default_rng(seed)
    dark_rng = np.random.default_rng([seed, 1])
    pairs = []
    for i in range(n):
        cloud = _smooth_field(rng, size)
        water = 0.5 * cloud + 0.5 * _smooth_field(rng, size)
        surface = _smooth_field(rng, size)
        ir = np.stack([cloud, water, surface])
        vis = ir_to_visible(ir)
        vis = vis + noise * np.stack([gaussian_filter(rng.standard_normal((size, size)), 1.5, mode="wrap")
                                      for _ in range(3)]) / 0.19
        u = dark_rng.random()
        if u < night_fraction:
            vis = np.zeros_like(vis)
        elif u < night_fraction + dark_patch_fraction:
            r0, c0 = dark_rng.integers(0, size - patch + 1, size=2)
            vis[:, r0:r0 + patch, c0:c0 + patch] = 0.0
        pairs.append(SamplePair(
            id=f"synth-{i:05d}",
            timestamp=start + i * step,
            ir=np.clip(ir, 0.0, 1.0).astype(np.float32)[None],
            visible=np.clip(vis, 0.0, 1.0).astype(np.float32)[None],
        ))
    return pairs


def write_corpus(pairs: Sequence[SamplePair], out_dir, fmt: str = "png", l_raw: float = 255.0) -> DatasetManifest:
    """Write pairs as image files plus ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "ir").mkdir(parents=True, exist_ok=True)
    (out_dir / "vis").mkdir(parents=True, exist_ok=True)
    ext = ".png" if fmt == "png" else ".ivt"
    records = []
    for pair in pairs:
        ir_path = Path("ir") / f"{pair.id}{ext}"
        vis_path = Path("vis") / f"{pair.id}{ext}" if pair.visible is not None else None
        if fmt == "png":
            save_png(out_dir / ir_path, pair.ir)
            if vis_path:
                save_png(out_dir / vis_path, pair.visible)
        else:
            save_ivt_image(out_dir / ir_path, pair.ir)
            if vis_path:
                save_ivt_image(out_dir / vis_path, pair.visible, pair.mask)
        records.append(ManifestRecord(pair.id, str(ir_path), str(vis_path) if vis_path else None,
                                      pair.timestamp, pair.split))
    manifest = DatasetManifest(records, l_raw=l_raw, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def stack_images(pairs: Sequence[SamplePair], attr: str = "ir", dtype=np.float32) -> np.ndarray:
    return np.concatenate([getattr(p, attr) for p in pairs], axis=0).astype(dtype, copy=False)


def stack_masks(pairs: Sequence[SamplePair]) -> Optional[np.ndarray]:
    """(N, 1, H, W) validity array, or None when no pair carries an invalid pixel."""
    if all(p.mask is None or p.mask.is_all_valid for p in pairs):
        return None
    h, w = pairs[0].size
    return np.stack([(p.mask.valid if p.mask is not None else np.ones((h, w), bool))[None] for p in pairs])
