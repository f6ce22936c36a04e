"""THRM dataset container and oracle-driven dataset generation.

Layout: 8-byte magic ``THRM0001``, a little-endian uint64 byte length, a UTF-8
JSON header, then ``count`` records. Each record is the power grids
(device_layers x H x W, little-endian f32, W/m^3) followed by the temperature
grids of the same shape (K).
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, DatasetFormatError, SolverDidNotConverge
from .thermal import ChipStack, sample_power_map, solve_steady

log = logging.getLogger(__name__)

MAGIC = b"THRM0001"
SPLIT_RATIO = (4, 1)


def n_train_for(count: int, split_ratio=SPLIT_RATIO) -> int:
    a, b = split_ratio
    return int(round(count * a / (a + b)))


@dataclass
class ThermalDataset:
    header: dict
    power: np.ndarray  # [n, D, H, W] W/m^3
    temperature: np.ndarray  # [n, D, H, W] K
    n_train: int = -1

    def __post_init__(self):
        if self.power.shape != self.temperature.shape:
            raise DatasetFormatError("power and temperature arrays must share a shape")
        if self.n_train < 0:
            self.n_train = n_train_for(len(self.power), self.header.get("split_ratio", SPLIT_RATIO))

    def __len__(self):
        return len(self.power)

    @property
    def resolution(self):
        return tuple(self.power.shape[-2:])

    @property
    def device_layers(self):
        return self.power.shape[1]

    @property
    def t_a(self) -> float:
        return float(self.header["t_a"])

    @property
    def train(self):
        return self.power[:self.n_train], self.temperature[:self.n_train]

    @property
    def test(self):
        return self.power[self.n_train:], self.temperature[self.n_train:]

    @property
    def dataset_id(self) -> str:
        h = self.header
        return f"{h.get('chip_id')}-{h.get('H')}x{h.get('W')}-n{h.get('count')}-seed{h.get('seed')}"

    def take_train(self, n: int) -> "ThermalDataset":
        """Keep only the first ``n`` training records; the test split is unchanged."""
        n = min(n, self.n_train)
        keep = np.r_[0:n, self.n_train:len(self)]
        return ThermalDataset(dict(self.header), self.power[keep], self.temperature[keep], n_train=n)


def write_thrm(path, header: dict, power: np.ndarray, temperature: np.ndarray) -> None:
    power = np.asarray(power, dtype="<f4")
    temperature = np.asarray(temperature, dtype="<f4")
    header = dict(header, count=int(len(power)), dtype="f32le")
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for p, t in zip(power, temperature):
            f.write(p.tobytes())
            f.write(t.tobytes())


def read_thrm(path) -> ThermalDataset:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise BadMagic(f"{path}: not a THRM file (magic {raw[:8]!r})")
    if len(raw) < 16:
        raise DatasetFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DatasetFormatError(f"{path}: unreadable header ({err})") from err
    if header.get("dtype") != "f32le":
        raise DatasetFormatError(f"unsupported dtype {header.get('dtype')!r}")
    n, D, H, W = header["count"], header["device_layers"], header["H"], header["W"]
    payload = len(raw) - 16 - hlen
    if payload != 4 * n * 2 * D * H * W:
        raise DatasetFormatError(f"{path}: expected {n} records, payload holds {payload} bytes")
    body = np.frombuffer(raw, dtype="<f4", offset=16 + hlen)
    recs = body.reshape(n, 2, D, H, W).astype(np.float32)
    return ThermalDataset(header, recs[:, 0], recs[:, 1])


def generate_dataset(stack: ChipStack, n: int, seed: int, out_path, p_total_range=None, tol: float = 1e-8,
                     skip_failures: bool = False) -> ThermalDataset:
    """Solve ``n`` random power maps and write them to a THRM file."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out_path = Path(out_path)
    p_range = tuple(stack.p_total_range if p_total_range is None else p_total_range)
    seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    powers, temps, failed = [], [], []
    for i, s in enumerate(seeds):
        pmap = sample_power_map(stack, int(s), p_range)
        try:
            field_ = solve_steady(stack, pmap, tol=tol)
        except SolverDidNotConverge as err:
            if not skip_failures:
                raise
            log.warning("sample %d skipped: %s", i, err)
            failed.append(i)
            continue
        powers.append(pmap.q)
        temps.append(field_.layers)
    H, W = stack.resolution
    header = {
        "chip_id": stack.chip_id,
        "H": H,
        "W": W,
        "device_layers": len(stack.device_layers),
        "layer_names": [l.name for l in stack.device_layers],
        "split_ratio": list(SPLIT_RATIO),
        "seed": int(seed),
        "t_a": stack.boundary.t_a,
        "eta": stack.boundary.eta,
        "p_total_range": list(p_range),
        "skipped": failed,
    }
    power = np.asarray(powers, dtype=np.float32)
    temp = np.asarray(temps, dtype=np.float32)
    write_thrm(out_path, header, power, temp)
    return read_thrm(out_path)


@dataclass
class Normalizer:
    """Per-channel affine encodings: power -> z-score, temperature rise -> z-score."""

    in_mean: list
    in_std: list
    out_mean: list
    out_std: list
    t_a: float = 298.15

    @classmethod
    def fit(cls, power: np.ndarray, temperature: np.ndarray, t_a: float) -> "Normalizer":
        rise = temperature.astype(np.float64) - t_a
        p = power.astype(np.float64)
        axes = (0, 2, 3)
        return cls(p.mean(axis=axes).tolist(), _safe_std(p, axes).tolist(),
                   rise.mean(axis=axes).tolist(), _safe_std(rise, axes).tolist(), float(t_a))

    def _stats(self, name, dtype):
        return np.asarray(getattr(self, name), dtype=dtype)[None, :, None, None]

    def encode_input(self, power: np.ndarray) -> np.ndarray:
        z = (power - self._stats("in_mean", np.float64)) / self._stats("in_std", np.float64)
        return z.astype(np.float32)

    def encode_target(self, temperature: np.ndarray) -> np.ndarray:
        rise = temperature.astype(np.float64) - self.t_a
        return ((rise - self._stats("out_mean", np.float64)) / self._stats("out_std", np.float64)).astype(np.float32)

    def decode_output(self, y: np.ndarray) -> np.ndarray:
        rise = y.astype(np.float64) * self._stats("out_std", np.float64) + self._stats("out_mean", np.float64)
        return rise + self.t_a

    def to_dict(self) -> dict:
        return {"in_mean": self.in_mean, "in_std": self.in_std, "out_mean": self.out_mean,
                "out_std": self.out_std, "t_a": self.t_a}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(**d)


def _safe_std(a, axes):
    s = a.std(axis=axes)
    return np.where(s > 0, s, 1.0)
