"""Wall-clock comparison of the CG oracle against batched model inference."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Normalizer
from .errors import TooFewSamples
from .model import SAUFNO
from .thermal import ChipStack, sample_power_map, solve_steady
from .training import predict


@dataclass
class BenchmarkReport:
    oracle_mean_s: float
    inference_mean_s: float
    speedup: float
    resolution: list
    n_samples: int
    batch_size: int
    order: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def benchmark(model: SAUFNO, stack: ChipStack, n: int, normalizer: Normalizer, batch_size: int = 8,
              seed: int = 0, oracle_first: bool = True) -> BenchmarkReport:
    """Time ``n`` oracle solves and the model on the same ``n`` power maps.

    One extra map warms both paths up and is not timed. Inference time covers
    normalisation and denormalisation as well as the forward pass, and is
    reported per sample.
    """
    if n < 3:
        raise TooFewSamples(f"benchmark needs n >= 3 samples, got {n}")
    seeds = np.random.SeedSequence(seed).generate_state(n + 1, dtype=np.uint64)
    maps = [sample_power_map(stack, int(s)) for s in seeds]
    power = np.stack([m.q for m in maps]).astype(np.float32)

    def run_oracle():
        solve_steady(stack, maps[0])
        t0 = time.perf_counter()
        for m in maps[1:]:
            solve_steady(stack, m)
        return (time.perf_counter() - t0) / n

    def run_model():
        predict(model, normalizer, power[:1])
        t0 = time.perf_counter()
        predict(model, normalizer, power[1:], batch_size=batch_size)
        return (time.perf_counter() - t0) / n

    if oracle_first:
        oracle = run_oracle()
        infer = run_model()
    else:
        infer = run_model()
        oracle = run_oracle()
    return BenchmarkReport(oracle, infer, oracle / infer, list(stack.resolution), n, batch_size,
                           "oracle_first" if oracle_first else "model_first")
