"""Trajectory storage shared by the variational, exact and mean-field backends.

On disk a record is a directory with one ``<observable>.csv`` per observable
(columns ``t,value,im_residual``), a ``diagnostics.csv`` and ``metadata.json``.
Floats are written with ``repr`` so files round-trip bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import InvalidInputError

DIAGNOSTICS_FILE = "diagnostics.csv"
METADATA_FILE = "metadata.json"


@dataclass
class TrajectoryRecord:
    times: list[float] = field(default_factory=list)
    columns: dict[str, list[complex]] = field(default_factory=dict)
    diagnostics: dict[str, list[float]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def append(
        self,
        t: float,
        values: Mapping[str, complex],
        diagnostics: Mapping[str, float] | None = None,
    ) -> None:
        if self.times and not t > self.times[-1]:
            raise InvalidInputError(f"time {t} does not increase past {self.times[-1]}")
        row = len(self.times)
        self.times.append(float(t))
        for name, value in values.items():
            self.columns.setdefault(name, [complex("nan")] * row).append(complex(value))
        for name, col in self.columns.items():
            if len(col) < row + 1:
                col.append(complex("nan"))
        for name, value in (diagnostics or {}).items():
            self.diagnostics.setdefault(name, [math.nan] * row).append(float(value))
        for name, col in self.diagnostics.items():
            if len(col) < row + 1:
                col.append(math.nan)

    def truncate(self, t_max: float) -> None:
        """Drop rows with ``t > t_max`` (used when resuming from a checkpoint)."""
        keep = sum(1 for t in self.times if t <= t_max)
        self.times = self.times[:keep]
        for col in list(self.columns.values()) + list(self.diagnostics.values()):
            del col[keep:]

    def real(self, name: str) -> list[float]:
        return [v.real for v in self.columns[name]]

    # -- files ---------------------------------------------------------------

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, col in self.columns.items():
            with open(out / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "value", "im_residual"])
                for t, v in zip(self.times, col):
                    w.writerow([repr(t), repr(v.real), repr(v.imag)])
        names = sorted(self.diagnostics)
        with open(out / DIAGNOSTICS_FILE, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for i, t in enumerate(self.times):
                w.writerow([repr(t)] + [repr(self.diagnostics[n][i]) for n in names])
        meta = dict(self.metadata)
        meta["observables"] = sorted(self.columns)
        (out / METADATA_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))

    @classmethod
    def read(cls, out_dir: str | Path) -> TrajectoryRecord:
        out = Path(out_dir)
        meta_path = out / METADATA_FILE
        if not meta_path.exists():
            raise InvalidInputError(f"{out} has no {METADATA_FILE}")
        meta = json.loads(meta_path.read_text())
        rec = cls(metadata=meta)
        for name in meta.get("observables", []):
            times, values = [], []
            with open(out / f"{name}.csv", newline="") as fh:
                for row in csv.DictReader(fh):
                    times.append(float(row["t"]))
                    values.append(complex(float(row["value"]), float(row["im_residual"])))
            if not rec.times:
                rec.times = times
            elif times != rec.times:
                raise InvalidInputError(f"{name}.csv has a different time grid")
            rec.columns[name] = values
        diag = out / DIAGNOSTICS_FILE
        if diag.exists():
            with open(diag, newline="") as fh:
                reader = csv.DictReader(fh)
                rows = list(reader)
            if not rec.times:
                rec.times = [float(r["t"]) for r in rows]
            for name in reader.fieldnames or []:
                if name != "t":
                    rec.diagnostics[name] = [float(r[name]) for r in rows]
        return rec
