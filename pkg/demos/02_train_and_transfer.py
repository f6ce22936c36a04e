"""Train a small SAU-FNO on coarse data, then carry it to a finer grid.

1. Generate 16x16 and 32x32 chip1 datasets with the oracle.
2. Train at 16x16 and evaluate zero-shot at 32x32 (same parameters).
3. Fine-tune on a handful of 32x32 samples at a tenth of the learning rate.

Takes several minutes on one core. ``python demos/02_train_and_transfer.py [workdir]``
"""
import sys
from pathlib import Path

from saufno.dataset import generate_dataset, read_thrm
from saufno.metrics import compute_metrics
from saufno.model import SAUFNO, ModelConfig
from saufno.thermal import build_stack
from saufno.training import TrainConfig, finetune, predict, save_checkpoint, train

work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
work.mkdir(exist_ok=True)

low, high = work / "chip1_16.thrm", work / "chip1_32.thrm"
if not low.exists():
    generate_dataset(build_stack("chip1", 16), 100, seed=1, out_path=low)
if not high.exists():
    generate_dataset(build_stack("chip1", 32), 25, seed=2, out_path=high)
ds16, ds32 = read_thrm(low), read_thrm(high)
print(f"{len(ds16)} coarse samples, {len(ds32)} fine samples")

config = ModelConfig(width=12, modes=(8, 8), n_fourier=2, n_ufourier=2, attn_dim=12, unet_channels=(8, 16, 32, 64),
                     unet_resolution=(16, 16))  # U-Net kernels keep their physical size on finer grids
cfg = TrainConfig(lr=1e-3, epochs=30, batch_size=8, decay_every=10, finetune_epochs=15)
model = SAUFNO(config, seed=0)
print(f"{model.n_parameters()} parameters")
ckpt = train(model, ds16, cfg)
for h in ckpt.history[::5]:
    print(f"  epoch {h['epoch']:3d}  train {h['train_loss']:.4f}  test {h['test_loss']:.4f}")
save_checkpoint(ckpt, work / "coarse.sauf")


def report(tag, ck, ds):
    pred = predict(ck.build_model(), ck.normalizer, ds.test[0])
    r = compute_metrics(pred, ds.test[1])
    print(f"{tag:28s} RMSE {r.rmse:.3f} K  MAPE {r.mape:.4f}%  junction err {r.max_err:.3f} K")


report("16x16, trained here", ckpt, ds16)
report("32x32, zero-shot", ckpt, ds32)
tuned = finetune(ckpt, ds32, cfg)
report("32x32, after fine-tuning", tuned, ds32)
save_checkpoint(tuned, work / "fine.sauf")
