"""Append-only training log (newline-delimited JSON)."""
from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Optional


class TrainLog:
    """Records are dicts with a ``kind`` of "step", "epoch", "stage" or "event".

    Step records carry a monotone ``step`` index, one per optimizer update.
    """

    def __init__(self, path=None):
        self.records: list = []
        self.path = Path(path) if path else None
        self._t0 = time.perf_counter()
        self._step = 0
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, kind: str, **fields) -> dict:
        rec = {"kind": kind, **fields, "wall": round(time.perf_counter() - self._t0, 6)}
        self.records.append(rec)
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
        return rec

    def step(self, type_: str, **losses) -> dict:
        rec = self.append("step", step=self._step, type=type_, **losses)
        self._step += 1
        return rec

    @property
    def n_steps(self) -> int:
        return self._step

    def of_kind(self, kind: str, type_: Optional[str] = None) -> list:
        return [r for r in self.records if r["kind"] == kind and (type_ is None or r.get("type") == type_)]

    @classmethod
    def read(cls, path) -> "TrainLog":
        log = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                log.records.append(json.loads(line))
        log._step = len(log.of_kind("step"))
        return log
