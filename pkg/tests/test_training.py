import numpy as np
import pytest

from saufno import tensor as T
from saufno.dataset import (Normalizer, ThermalDataset, generate_dataset, read_thrm, write_thrm)
from saufno.errors import (BadMagic, CheckpointFormatError, CheckpointNotFound, DatasetFormatError, ShapeError,
                           TrainingDiverged)
from saufno.model import SAUFNO, ModelConfig
from saufno.optim import Adam
from saufno.tensor import Tensor
from saufno.thermal import build_stack
from saufno.training import (TrainConfig, finetune, l2_loss, load_checkpoint, normalized_loss, predict,
                             save_checkpoint, train)

TINY = ModelConfig(width=4, modes=(4, 4), n_fourier=1, n_ufourier=1, attn_dim=4, unet_channels=(4, 8, 8, 8))


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d16.thrm"
    return generate_dataset(build_stack("chip1", 16), 10, 7, path)


@pytest.fixture(scope="module")
def small_ds32(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d32.thrm"
    return generate_dataset(build_stack("chip1", 32), 5, 8, path)


def synthetic(n, res=16, rise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    power = rng.uniform(0, 1e9, (n, 2, res, res)).astype(np.float32)
    temp = np.full((n, 2, res, res), 298.15 + rise, dtype=np.float32)
    header = {"chip_id": "syn", "H": res, "W": res, "device_layers": 2, "t_a": 298.15, "seed": seed, "count": n}
    return ThermalDataset(header, power, temp)


# -- dataset file -------------------------------------------------------------------

def test_thrm_header_and_invariants(small_ds):
    h = small_ds.header
    assert h["count"] == len(small_ds) == 10 and h["split_ratio"] == [4, 1]
    assert small_ds.n_train == 8 and len(small_ds.test[0]) == 2
    assert np.all(small_ds.temperature >= h["t_a"] - 1e-6)
    assert h["dtype"] == "f32le" and h["device_layers"] == 2


def test_thrm_reproducible(tmp_path):
    s = build_stack("chip1", 16)
    generate_dataset(s, 3, 5, tmp_path / "a.thrm")
    generate_dataset(s, 3, 5, tmp_path / "b.thrm")
    assert (tmp_path / "a.thrm").read_bytes() == (tmp_path / "b.thrm").read_bytes()


def test_thrm_errors(tmp_path, small_ds):
    bad = tmp_path / "bad.thrm"
    bad.write_bytes(b"NOPE0001" + bytes(8))
    with pytest.raises(BadMagic):
        read_thrm(bad)
    write_thrm(tmp_path / "t.thrm", small_ds.header, small_ds.power, small_ds.temperature)
    raw = (tmp_path / "t.thrm").read_bytes()
    (tmp_path / "cut.thrm").write_bytes(raw[:-10])
    with pytest.raises(DatasetFormatError):
        read_thrm(tmp_path / "cut.thrm")


def test_normalizer_round_trip(small_ds):
    nz = Normalizer.fit(*small_ds.train, t_a=small_ds.t_a)
    y = nz.encode_target(small_ds.temperature)
    np.testing.assert_allclose(nz.decode_output(y), small_ds.temperature, atol=1e-4)
    assert Normalizer.from_dict(nz.to_dict()) == nz


# -- loss ------------------------------------------------------------------------------

def test_l2_loss_examples():
    t = np.array([[0.0, 1.0]])
    assert l2_loss(Tensor(t), t).item() == 0
    assert l2_loss(Tensor(t + 1), t).item() == pytest.approx(1.0)
    assert l2_loss(Tensor(np.array([1.0, 3.0])), np.array([0.0, 1.0])).item() == pytest.approx(2.5)
    with pytest.raises(ShapeError):
        l2_loss(Tensor(np.zeros(3)), np.zeros(2))


# -- train -----------------------------------------------------------------------------

def test_single_batch_overfit(small_ds):
    ds = ThermalDataset(small_ds.header, small_ds.power[:1], small_ds.temperature[:1], n_train=1)
    ck = train(SAUFNO(TINY, 0), ds, TrainConfig(lr=1e-3, epochs=500, batch_size=1, decay_every=1000),
               evaluate=False)
    first, last = ck.history[0]["train_loss"], ck.history[-1]["train_loss"]
    assert first / last >= 100


def test_degenerate_zero_target_fit():
    ds = synthetic(4)
    nz = Normalizer([0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0], 298.15)
    ds.power[...] = 0
    ck = train(SAUFNO(TINY, 0), ThermalDataset(ds.header, ds.power, ds.temperature, n_train=4),
               TrainConfig(lr=1e-3, epochs=150, batch_size=4, decay_every=1000), normalizer=nz, evaluate=False)
    assert ck.history[-1]["train_loss"] < 1e-6


def test_same_seed_same_curve(small_ds):
    cfg = TrainConfig(lr=1e-3, epochs=2, batch_size=4, seed=3)
    a = train(SAUFNO(TINY, 1), small_ds, cfg)
    b = train(SAUFNO(TINY, 1), small_ds, cfg)
    assert a.history == b.history
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_lr_zero_keeps_parameters(small_ds):
    m = SAUFNO(TINY, 2)
    before = m.state_dict()
    ck = train(m, small_ds, TrainConfig(lr=0.0, weight_decay=0.0, epochs=2, batch_size=4), evaluate=False)
    assert all(np.array_equal(before[k], ck.params[k]) for k in before)


def test_single_adam_step_decreases_loss():
    ds = synthetic(1, rise=3.0)
    ds.temperature[...] += np.random.default_rng(2).uniform(0, 1, ds.temperature.shape).astype(np.float32)
    nz = Normalizer.fit(ds.power, ds.temperature, 298.15)
    x, y = Tensor(nz.encode_input(ds.power)), nz.encode_target(ds.temperature)
    m = SAUFNO(TINY, 0)
    opt = Adam(m.parameters(), lr=1e-4)
    loss0 = l2_loss(m(x), y)
    loss0.backward()
    opt.step()
    with T.no_grad():
        assert l2_loss(m(x), y).item() < loss0.item()


def test_nan_loss_reports_epoch_and_batch():
    ds = synthetic(4)
    ds.temperature[2, 0, 0, 0] = np.nan
    nz = Normalizer([0.0, 0.0], [1e9, 1e9], [0.0, 0.0], [1.0, 1.0], 298.15)
    cfg = TrainConfig(lr=1e-3, epochs=1, batch_size=1, seed=0)
    with pytest.raises(TrainingDiverged) as info:
        train(SAUFNO(TINY, 0), ThermalDataset(ds.header, ds.power, ds.temperature, n_train=4), cfg,
              normalizer=nz, evaluate=False)
    order = np.random.default_rng([0, 1]).permutation(4)
    assert info.value.epoch == 1 and info.value.batch == int(np.flatnonzero(order == 2)[0])


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=1e-4, finetune_lr=1e-3)
    assert TrainConfig(lr=1.0, decay_every=50).lr_at(101) == 0.25


# -- checkpoints -----------------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path, small_ds):
    ck = train(SAUFNO(TINY, 0), small_ds, TrainConfig(lr=1e-3, epochs=1, batch_size=4))
    save_checkpoint(ck, tmp_path / "c.sauf")
    back = load_checkpoint(tmp_path / "c.sauf")
    assert back.config == ck.config and back.metadata == ck.metadata
    for k in ck.params:
        assert back.params[k].tobytes() == ck.params[k].tobytes()
        assert back.optimizer.m[k].tobytes() == ck.optimizer.m[k].tobytes()
        assert back.optimizer.v[k].tobytes() == ck.optimizer.v[k].tobytes()
    assert back.optimizer.t == ck.optimizer.t


def test_checkpoint_errors(tmp_path, small_ds):
    with pytest.raises(CheckpointNotFound):
        load_checkpoint(tmp_path / "missing.sauf")
    (tmp_path / "bad.sauf").write_bytes(b"THRM0001" + bytes(100))
    with pytest.raises(BadMagic):
        load_checkpoint(tmp_path / "bad.sauf")
    ck = train(SAUFNO(TINY, 0), small_ds, TrainConfig(lr=1e-3, epochs=1, batch_size=4), evaluate=False)
    save_checkpoint(ck, tmp_path / "c.sauf")
    raw = (tmp_path / "c.sauf").read_bytes()
    (tmp_path / "cut.sauf").write_bytes(raw[:-7])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "cut.sauf")
    bumped = raw.replace(b'"version": 1', b'"version": 9')
    (tmp_path / "v9.sauf").write_bytes(bumped)
    with pytest.raises(CheckpointFormatError, match="version"):
        load_checkpoint(tmp_path / "v9.sauf")


def test_resume_matches_uninterrupted(tmp_path, small_ds):
    cfg = TrainConfig(lr=1e-3, epochs=3, batch_size=4, seed=5)
    full = train(SAUFNO(TINY, 0), small_ds, cfg, evaluate=False)
    part = train(SAUFNO(TINY, 0), small_ds, cfg, epochs=2, evaluate=False)
    save_checkpoint(part, tmp_path / "p.sauf")
    resumed = train(SAUFNO(TINY, 9), small_ds, cfg, resume=load_checkpoint(tmp_path / "p.sauf"), evaluate=False)
    assert all(full.params[k].tobytes() == resumed.params[k].tobytes() for k in full.params)


# -- fine-tuning ---------------------------------------------------------------------------

def test_finetune_keeps_shapes_and_improves(small_ds, small_ds32):
    cfg = TrainConfig(lr=3e-3, epochs=15, batch_size=4, finetune_epochs=15)
    pre = train(SAUFNO(TINY, 0), small_ds, cfg, evaluate=False)
    zero_shot = normalized_loss(pre.build_model(), pre.normalizer, *small_ds32.test)
    ft = finetune(pre, small_ds32, cfg)
    assert {k: v.shape for k, v in ft.params.items()} == {k: v.shape for k, v in pre.params.items()}
    assert ft.metadata["train_config"]["lr"] == pytest.approx(3e-4)
    assert ft.normalizer == pre.normalizer
    assert ft.history[-1]["test_loss"] <= zero_shot


def test_finetune_zero_epochs_is_identity(small_ds, small_ds32):
    cfg = TrainConfig(lr=1e-3, epochs=1, batch_size=4, finetune_epochs=0)
    pre = train(SAUFNO(TINY, 0), small_ds, cfg, evaluate=False)
    ft = finetune(pre, small_ds32, cfg)
    assert all(np.array_equal(ft.params[k], pre.params[k]) for k in pre.params)


def test_finetune_rejects_mismatched_channels(small_ds):
    pre = train(SAUFNO(TINY, 0), small_ds, TrainConfig(lr=1e-3, epochs=1, batch_size=4), evaluate=False)
    three = synthetic(5)
    three = ThermalDataset(three.header, np.concatenate([three.power, three.power[:, :1]], 1),
                           np.concatenate([three.temperature, three.temperature[:, :1]], 1))
    with pytest.raises(ShapeError):
        finetune(pre, three, TrainConfig(lr=1e-3, epochs=1))


def test_predict_returns_kelvin(small_ds):
    ck = train(SAUFNO(TINY, 0), small_ds, TrainConfig(lr=1e-3, epochs=1, batch_size=4), evaluate=False)
    out = predict(ck.build_model(), ck.normalizer, small_ds.test[0])
    assert out.shape == small_ds.test[1].shape and np.all(np.isfinite(out)) and out.mean() > 250
