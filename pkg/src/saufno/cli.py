"""Command-line entry point: ``saufno <subcommand> ...``.

Failures print one line ``error: <ExceptionClass>: <message>`` on stderr and
exit with status 1; bad usage exits 2 via argparse.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .bench import benchmark
from .dataset import generate_dataset, read_thrm
from .errors import SaufnoError
from .heatmap import render_heatmap
from .metrics import compute_metrics
from .model import SAUFNO, ModelConfig
from .thermal import build_stack, load_stack_json
from .training import TrainConfig, finetune, load_checkpoint, predict, save_checkpoint, train


def _stack(chip: str, res: int):
    if chip.endswith(".json"):
        return load_stack_json(chip).with_resolution(res)
    return build_stack(chip, res)


def _split_config(d: dict):
    """Accept {"model": {...}, "train": {...}} or one flat dict of field names."""
    if "model" in d or "train" in d:
        m, t = d.get("model", {}), d.get("train", {})
    else:
        m = {k: v for k, v in d.items() if k in ModelConfig.__dataclass_fields__}
        t = {k: v for k, v in d.items() if k in TrainConfig.__dataclass_fields__}
        unknown = set(d) - set(m) - set(t)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return m, t


def cmd_gen_data(a):
    stack = _stack(a.chip, a.res)
    ds = generate_dataset(stack, a.n, a.seed, a.out)
    print(json.dumps({"out": str(a.out), "count": len(ds), "n_train": ds.n_train, "skipped": ds.header["skipped"]}))


def cmd_train(a):
    ds = read_thrm(a.data)
    m, t = _split_config(json.loads(Path(a.config).read_text())) if a.config else ({}, {})
    if a.epochs is not None:
        t["epochs"] = a.epochs
    m.setdefault("in_channels", ds.device_layers)
    m.setdefault("out_channels", ds.device_layers)
    cfg = ModelConfig.from_dict(m)
    tcfg = TrainConfig.from_dict(t)
    ckpt = train(SAUFNO(cfg, tcfg.seed), ds, tcfg)
    save_checkpoint(ckpt, a.out)
    last = ckpt.history[-1]
    print(json.dumps({"out": str(a.out), "epochs": ckpt.metadata["epoch"], "train_loss": last["train_loss"],
                      "test_loss": last.get("test_loss")}))


def cmd_finetune(a):
    ck = load_checkpoint(a.ckpt)
    ds = read_thrm(a.data)
    tcfg = TrainConfig.from_dict(ck.metadata.get("train_config", {}))
    if a.epochs is not None:
        tcfg.finetune_epochs = a.epochs
    if a.lr is not None:
        tcfg.finetune_lr = a.lr
    out = finetune(ck, ds, tcfg)
    save_checkpoint(out, a.out)
    last = out.history[-1] if out.history else {}
    print(json.dumps({"out": str(a.out), "epochs": out.metadata["epoch"], "test_loss": last.get("test_loss")}))


def _select(ds, split):
    if split == "train":
        return ds.train
    if split == "test":
        return ds.test
    return ds.power, ds.temperature


def cmd_evaluate(a):
    ds = read_thrm(a.data)
    power, truth = _select(ds, a.split)
    t0 = time.perf_counter()
    if a.pred:
        pred = _select(read_thrm(a.pred), a.split)[1]
    else:
        ck = load_checkpoint(a.ckpt)
        pred = predict(ck.build_model(), ck.normalizer, power)
    report = compute_metrics(pred, truth, runtime_s=time.perf_counter() - t0)
    if a.report:
        report.save(a.report)
    print(json.dumps({k: getattr(report, k) for k in ("rmse", "mape", "pape", "max_err", "mean_err", "n_samples")}))


def _load_power(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        p = np.load(path)
        return p[None] if p.ndim == 3 else p
    return read_thrm(path).power


def cmd_predict(a):
    ck = load_checkpoint(a.ckpt)
    power = _load_power(a.power)
    temps = predict(ck.build_model(), ck.normalizer, power)
    out = Path(a.heatmap)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "prediction.npy", temps)
    for i, sample in enumerate(temps):
        for j, layer in enumerate(sample):
            render_heatmap(layer, out / f"sample{i:03d}_layer{j}.ppm", a.scale)
    print(json.dumps({"out": str(out), "samples": len(temps), "t_max": float(temps.max())}))


def cmd_benchmark(a):
    ck = load_checkpoint(a.ckpt)
    rep = benchmark(ck.build_model(), _stack(a.chip, a.res), a.n, ck.normalizer, batch_size=a.batch_size,
                    seed=a.seed, oracle_first=not a.model_first)
    if a.report:
        Path(a.report).write_text(rep.to_json() + "\n")
    print(rep.to_json())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saufno", description="Thermal surrogate: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = bit-reproducible)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="solve random power maps with the oracle")
    g.add_argument("--chip", required=True, help="chip1, chip2, chip3 or a stack .json")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--res", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON with ModelConfig/TrainConfig fields")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("finetune")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--epochs", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("evaluate")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt")
    src.add_argument("--pred", help="THRM file whose temperatures are taken as the predictions")
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("test", "train", "all"), default="test")
    e.add_argument("--report")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--power", required=True, help="THRM dataset or .npy power maps [n, D, H, W]")
    r.add_argument("--heatmap", required=True, help="output directory")
    r.add_argument("--scale", type=int, default=4)
    r.set_defaults(func=cmd_predict)

    b = sub.add_parser("benchmark")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--chip", required=True)
    b.add_argument("--res", type=int, required=True)
    b.add_argument("--n", type=int, default=10)
    b.add_argument("--batch-size", type=int, default=8)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--model-first", action="store_true")
    b.add_argument("--report")
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except (SaufnoError, OSError, ValueError, KeyError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
