"""L2 training, low->high fidelity fine-tuning and the SAUF checkpoint format."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .dataset import Normalizer, ThermalDataset
from .errors import BadMagic, CheckpointFormatError, CheckpointNotFound, NonFiniteError, ShapeError, TrainingDiverged
from .model import SAUFNO, ModelConfig
from .optim import Adam, AdamState

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SAUF0001"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 200
    batch_size: int = 8
    decay_factor: float = 0.5
    decay_every: int = 50
    seed: int = 0
    finetune_lr: float | None = None  # default: lr / 10
    finetune_epochs: int | None = None  # default: epochs

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.finetune_lr is not None and self.finetune_lr >= self.lr:
            raise ValueError("fine-tune lr must be smaller than the pretraining lr")
        if self.finetune_epochs is not None and self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be >= 0")

    def lr_at(self, epoch: int, base: float | None = None) -> float:
        """Step decay; ``epoch`` counts from 1."""
        base = self.lr if base is None else base
        return base * self.decay_factor ** ((epoch - 1) // self.decay_every)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict  # name -> ndarray
    optimizer: AdamState | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def normalizer(self) -> Normalizer:
        return Normalizer.from_dict(self.metadata["normalizer"])

    @property
    def history(self) -> list:
        return self.metadata.get("history", [])

    def build_model(self) -> SAUFNO:
        model = SAUFNO(self.config)
        model.load_state_dict(self.params)
        return model


def l2_loss(pred, truth):
    """Mean squared error over every element."""
    truth = T.as_tensor(truth)
    if tuple(pred.shape) != tuple(truth.shape):
        raise ShapeError(f"l2_loss: prediction {pred.shape} vs truth {truth.shape}")
    diff = pred - truth
    return T.mean(diff * diff)


def predict(model: SAUFNO, normalizer: Normalizer, power: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Temperatures (K) for a stack of power maps [n, D, H, W]."""
    out = []
    with T.no_grad():
        for i in range(0, len(power), batch_size):
            x = normalizer.encode_input(power[i:i + batch_size])
            out.append(normalizer.decode_output(model(T.Tensor(x)).data))
    return np.concatenate(out) if out else np.zeros((0,) + power.shape[1:])


def normalized_loss(model, normalizer, power, temperature, batch_size=8) -> float:
    if len(power) == 0:
        return float("nan")
    total = 0.0
    with T.no_grad():
        for i in range(0, len(power), batch_size):
            x = normalizer.encode_input(power[i:i + batch_size])
            y = normalizer.encode_target(temperature[i:i + batch_size])
            total += float(l2_loss(model(T.Tensor(x)), y).item()) * len(x)
    return total / len(power)


def _run_epochs(model, opt, dataset, normalizer, cfg, first_epoch, last_epoch, base_lr, history, evaluate=True):
    x_all = normalizer.encode_input(dataset.train[0])
    y_all = normalizer.encode_target(dataset.train[1])
    test_p, test_t = dataset.test
    n = len(x_all)
    for epoch in range(first_epoch, last_epoch + 1):
        opt.lr = cfg.lr_at(epoch, base_lr)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        running = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = l2_loss(model(T.Tensor(x_all[idx])), y_all[idx])
            value = float(loss.item())
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            loss.backward()
            try:
                opt.step()
            except NonFiniteError as err:
                raise TrainingDiverged(f"epoch {epoch}, batch {b}: {err}", epoch=epoch, batch=b) from err
            running += value * len(idx)
        entry = {"epoch": epoch, "train_loss": running / n, "lr": opt.lr}
        if evaluate:
            entry["test_loss"] = normalized_loss(model, normalizer, test_p, test_t, cfg.batch_size)
        history.append(entry)
        log.info("epoch %d train %.4e test %s", epoch, entry["train_loss"], entry.get("test_loss"))


def train(model: SAUFNO, dataset: ThermalDataset, cfg: TrainConfig, normalizer: Normalizer | None = None,
          resume: Checkpoint | None = None, epochs: int | None = None, evaluate: bool = True) -> Checkpoint:
    """Mini-batch Adam on the L2 loss of normalised temperature rise.

    With ``resume`` the parameters, optimiser moments and epoch counter are
    restored and ``epochs`` more epochs are run (default: up to ``cfg.epochs``).
    Shuffling draws from a generator keyed on (seed, epoch), so interrupted and
    uninterrupted runs see the same batches.
    """
    if dataset.n_train < 1:
        raise ValueError("training split is empty")
    if model.config.in_channels != dataset.device_layers or model.config.out_channels != dataset.device_layers:
        raise ShapeError(f"model channels ({model.config.in_channels}->{model.config.out_channels}) do not "
                         f"match dataset device layers ({dataset.device_layers})")
    model.check_input((1, dataset.device_layers) + dataset.resolution)
    history = []
    start = 0
    if resume is not None:
        model.load_state_dict(resume.params)
        normalizer = resume.normalizer
        history = [dict(h) for h in resume.history]
        start = int(resume.metadata.get("epoch", 0))
    if normalizer is None:
        normalizer = Normalizer.fit(*dataset.train, t_a=dataset.t_a)
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    if resume is not None and resume.optimizer is not None:
        _restore_optimizer(opt, resume.optimizer)
    stop = start + epochs if epochs is not None else cfg.epochs
    _run_epochs(model, opt, dataset, normalizer, cfg, start + 1, stop, cfg.lr, history, evaluate)
    return Checkpoint(model.config, model.state_dict(), _copy_state(opt.state), {
        "stage": resume.metadata.get("stage", "pretrain") if resume is not None else "pretrain",
        "dataset_id": dataset.dataset_id,
        "resolution": list(dataset.resolution),
        "epoch": stop,
        "history": history,
        "normalizer": normalizer.to_dict(),
        "train_config": asdict(cfg),
    })


def finetune(checkpoint, dataset: ThermalDataset, cfg: TrainConfig | None = None, evaluate: bool = True) -> Checkpoint:
    """Continue from a pretrained checkpoint on (typically higher-resolution) data.

    Parameters carry over, the optimiser starts fresh, normalisation statistics
    are the pretraining ones, and the learning rate is ``cfg.finetune_lr``
    (default: pretraining lr / 10).
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    if cfg is None:
        cfg = TrainConfig.from_dict(checkpoint.metadata.get("train_config", {}))
    pre_lr = checkpoint.metadata.get("train_config", {}).get("lr", cfg.lr)
    lr = cfg.finetune_lr if cfg.finetune_lr is not None else pre_lr / 10.0
    if lr >= pre_lr and pre_lr > 0:
        raise ValueError(f"fine-tune lr {lr} must be below the pretraining lr {pre_lr}")
    epochs = cfg.finetune_epochs if cfg.finetune_epochs is not None else cfg.epochs
    model = checkpoint.build_model()
    if model.config.in_channels != dataset.device_layers:
        raise ShapeError(f"checkpoint expects {model.config.in_channels} device layers, "
                         f"dataset has {dataset.device_layers}")
    model.check_input((1, dataset.device_layers) + dataset.resolution)
    normalizer = checkpoint.normalizer
    opt = Adam(model.parameters(), lr=lr, weight_decay=cfg.weight_decay)
    history = []
    _run_epochs(model, opt, dataset, normalizer, cfg, 1, epochs, lr, history, evaluate)
    return Checkpoint(model.config, model.state_dict(), _copy_state(opt.state), {
        "stage": "finetune",
        "parent_dataset_id": checkpoint.metadata.get("dataset_id"),
        "dataset_id": dataset.dataset_id,
        "resolution": list(dataset.resolution),
        "epoch": epochs,
        "history": history,
        "pretrain_history": checkpoint.history,
        "normalizer": normalizer.to_dict(),
        "train_config": dict(asdict(cfg), lr=lr),
    })


def _copy_state(state: AdamState) -> AdamState:
    return AdamState(state.lr, state.weight_decay, state.beta1, state.beta2, state.eps, state.t,
                     {k: v.copy() for k, v in state.m.items()}, {k: v.copy() for k, v in state.v.items()})


def _restore_optimizer(opt: Adam, state: AdamState) -> None:
    opt.state.t = state.t
    opt.state.m = {k: v.copy() for k, v in state.m.items()}
    opt.state.v = {k: v.copy() for k, v in state.v.items()}


# -- checkpoint file -----------------------------------------------------------

_DTYPES = {"f32le": "<f4", "f64le": "<f8"}


def _dtype_tag(a: np.ndarray) -> str:
    return "f64le" if a.dtype == np.float64 else "f32le"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    opt = None
    if ckpt.optimizer is not None:
        s = ckpt.optimizer
        opt = {"t": s.t, "lr": s.lr, "weight_decay": s.weight_decay, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps}
        tensors += [(f"adam_m/{k}", v) for k, v in s.m.items()]
        tensors += [(f"adam_v/{k}", v) for k, v in s.v.items()]
    directory, offset, payload = [], 0, []
    for name, arr in tensors:
        tag = _dtype_tag(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "dtype": tag, "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    manifest = {"version": CKPT_VERSION, "config": ckpt.config.to_dict(), "optimizer": opt,
                "metadata": ckpt.metadata, "tensors": directory}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for raw in payload:
            f.write(raw)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointNotFound(f"no checkpoint at {path}")
    raw = path.read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise BadMagic(f"{path}: not a SAUF checkpoint (magic {raw[:8]!r})")
    if len(raw) < 16:
        raise CheckpointFormatError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + mlen:
        raise CheckpointFormatError(f"{path}: truncated manifest")
    manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    if manifest.get("version") != CKPT_VERSION:
        raise CheckpointFormatError(f"{path}: checkpoint version {manifest.get('version')} != {CKPT_VERSION}")
    base = 16 + mlen
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in manifest["tensors"]:
        start = base + entry["offset"]
        if start + entry["nbytes"] > len(raw):
            raise CheckpointFormatError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]], count=int(np.prod(entry["shape"], dtype=np.int64)),
                            offset=start).reshape(entry["shape"])
        kind, name = entry["name"].split("/", 1)
        groups[kind][name] = arr.astype(arr.dtype.newbyteorder("="))
    opt = None
    if manifest.get("optimizer") is not None:
        o = manifest["optimizer"]
        opt = AdamState(o["lr"], o["weight_decay"], o["beta1"], o["beta2"], o["eps"], o["t"],
                        groups["adam_m"], groups["adam_v"])
    return Checkpoint(ModelConfig.from_dict(manifest["config"]), groups["param"], opt, manifest["metadata"])
