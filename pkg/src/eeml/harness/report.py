"""Per-task metrics, confidence intervals and report files."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InputError

Z95 = 1.96


def confidence_interval(values):
    """Mean and 95% half-width ``1.96 * sd / sqrt(n)`` with the n-1 sample sd."""
    x = np.asarray(list(values), dtype=np.float64)
    n = x.size
    if n == 0:
        raise InputError("confidence interval of an empty list")
    mean = float(np.mean(x))
    if n == 1:
        warnings.warn("single sample: confidence half-width reported as 0", RuntimeWarning,
                      stacklevel=2)
        return mean, 0.0
    sd = float(np.std(x, ddof=1))
    return mean, Z95 * sd / math.sqrt(n)


@dataclass
class MetricsReport:
    method: str
    shots: int
    per_task: list
    mean: float = 0.0
    ci_half_width: float = 0.0
    task_count: int = 0
    q_query: int = 0
    config_hash: str = ""
    checkpoints: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, method, shots, values, **kw):
        values = [float(v) for v in values]
        mean, half = confidence_interval(values)
        return cls(method=method, shots=shots, per_task=values, mean=mean,
                   ci_half_width=half, task_count=len(values), **kw)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_task")
        return d

    def line(self) -> str:
        return (f"{self.method} {self.shots}-shot: MSE {self.mean:.4f} "
                f"+- {self.ci_half_width:.4f} over {self.task_count} tasks")


def write_report(report: MetricsReport, out_dir, stem: str):
    """Write ``<stem>.csv`` (per-task MSE) and ``<stem>.json`` (summary)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "mse"])
        for i, v in enumerate(report.per_task):
            w.writerow([i, repr(v)])
    (out / f"{stem}.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    return out / f"{stem}.csv", out / f"{stem}.json"


def write_history(rows, path, header):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
