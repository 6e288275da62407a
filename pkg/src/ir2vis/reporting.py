"""Per-method metric reports (JSON and CSV)."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

METHOD_LABELS = {
    "knn": "Baseline: kNN",
    "cgan": "Method 1: cGAN",
    "unet": "Method 2: U-Net",
    "unetpp": "Method 3: U-Net++",
}
METHOD_ORDER = list(METHOD_LABELS.values())
CSV_COLUMNS = ("Method", "SSIM", "RSME")


def method_label(name: str) -> str:
    return METHOD_LABELS.get(name, name)


def method_sort_key(label: str):
    return (METHOD_ORDER.index(label), "") if label in METHOD_ORDER else (len(METHOD_ORDER), label)


@dataclass
class ImageScore:
    id: str
    ssim: float
    ssim_global: float
    rmse: float


@dataclass
class MethodResult:
    per_image: list
    passes: int = 1
    masked: bool = False

    @property
    def ssim_mean(self) -> float:
        return float(np.mean([s.ssim for s in self.per_image]))

    @property
    def ssim_global_mean(self) -> float:
        return float(np.mean([s.ssim_global for s in self.per_image]))

    @property
    def rmse_mean(self) -> float:
        return float(np.mean([s.rmse for s in self.per_image]))

    def to_json(self) -> dict:
        return {
            "ssim_mean": self.ssim_mean,
            "ssim_global_mean": self.ssim_global_mean,
            "rmse_mean": self.rmse_mean,
            "passes": self.passes,
            "masked": self.masked,
            "per_image": [asdict(s) for s in self.per_image],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MethodResult":
        return cls([ImageScore(**s) for s in doc["per_image"]], doc.get("passes", 1), doc.get("masked", False))


@dataclass
class MetricsReport:
    """Per-method scores. ``ssim`` is the windowed (11x11) mean; ``ssim_global`` pools all pixels."""

    methods: dict = field(default_factory=dict)

    def add(self, label: str, result: MethodResult) -> "MetricsReport":
        self.methods[label] = result
        return self

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        out = MetricsReport(dict(self.methods))
        out.methods.update(other.methods)
        return out

    def ordered(self) -> list:
        return sorted(self.methods.items(), key=lambda kv: method_sort_key(kv[0]))

    def to_json(self) -> dict:
        return {label: res.to_json() for label, res in self.ordered()}

    def rows(self) -> list:
        return [(label, res.ssim_mean, res.rmse_mean) for label, res in self.ordered()]

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for label, ssim, err in self.rows():
                writer.writerow([label, f"{ssim:.4f}", f"{err:.4f}"])
        return path

    @classmethod
    def read_json(cls, path) -> "MetricsReport":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({label: MethodResult.from_json(d) for label, d in doc.items()})
