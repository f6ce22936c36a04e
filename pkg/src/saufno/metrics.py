"""Accuracy metrics for predicted temperature fields.

Inputs are arrays in kelvin. Axis 0 indexes samples when the array has two or
more dimensions; a 0-d or 1-d array is a single sample. Every metric is
computed per sample over all of its cells and then averaged across samples.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError

METRICS = ("rmse", "mape", "pape", "max_err", "mean_err")


@dataclass
class MetricsReport:
    rmse: float
    mape: float  # percent
    pape: float  # percent, peak over cells
    max_err: float  # |max(pred) - max(truth)|, i.e. junction-temperature error
    mean_err: float
    n_samples: int
    resolution: list
    runtime_s: float = 0.0
    per_sample: list = field(default_factory=list)
    pooled: dict | None = None  # only present when pooled values differ by > 1%

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())
            f.write("\n")


def _per_sample(p: np.ndarray, t: np.ndarray) -> dict:
    err = np.abs(p - t)
    rel = err / t
    return {
        "rmse": float(np.sqrt(np.mean(err * err))),
        "mape": float(np.mean(rel) * 100.0),
        "pape": float(np.max(rel) * 100.0),
        "max_err": float(abs(np.max(p) - np.max(t))),
        "mean_err": float(np.mean(err)),
    }


def compute_metrics(pred, truth, runtime_s: float | None = None) -> MetricsReport:
    start = time.perf_counter()
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and truth {t.shape} differ")
    if t.size == 0:
        raise ShapeError("no cells to compare")
    if not np.all(t > 0):
        raise ValueError("truth temperatures must be strictly positive kelvin values")
    if p.ndim < 2:
        p, t = p.reshape(1, -1), t.reshape(1, -1)
    samples = [_per_sample(ps, ts) for ps, ts in zip(p, t)]
    avg = {k: float(np.mean([s[k] for s in samples])) for k in METRICS}

    flat_p, flat_t = p.reshape(len(p), -1), t.reshape(len(t), -1)
    err = np.abs(flat_p - flat_t)
    pooled = {
        "rmse": float(np.sqrt(np.mean(err * err))),
        "mape": float(np.mean(err / flat_t) * 100.0),
        "pape": float(np.max(err / flat_t) * 100.0),
        "max_err": float(abs(np.max(flat_p) - np.max(flat_t))),
        "mean_err": float(np.mean(err)),
    }
    diverges = any(abs(pooled[k] - avg[k]) > 0.01 * max(abs(avg[k]), 1e-300) for k in METRICS)
    if runtime_s is None:
        runtime_s = time.perf_counter() - start
    return MetricsReport(n_samples=len(samples), resolution=list(p.shape[-2:]) if p.ndim >= 3 else [p.shape[-1]],
                         runtime_s=float(runtime_s), per_sample=samples, pooled=pooled if diverges else None, **avg)
