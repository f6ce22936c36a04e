import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saufno.bench import benchmark
from saufno.cli import main
from saufno.dataset import Normalizer, read_thrm
from saufno.errors import ShapeError, TooFewSamples
from saufno.heatmap import colormap, read_ppm, render_heatmap, sidecar_path
from saufno.metrics import MetricsReport, compute_metrics
from saufno.model import SAUFNO, ModelConfig
from saufno.thermal import build_stack

TINY = ModelConfig(width=4, modes=(4, 4), n_fourier=1, n_ufourier=1, attn_dim=4, unet_channels=(4, 8, 8, 8))


# -- metrics ------------------------------------------------------------------------

def test_metrics_perfect_prediction():
    t = np.full((2, 2, 4, 4), 320.0)
    r = compute_metrics(t, t)
    assert r.rmse == r.mape == r.pape == r.max_err == r.mean_err == 0


def test_metrics_constant_offset_closed_form():
    t = np.full((3, 2, 4, 4), 350.0)
    r = compute_metrics(t + 1, t)
    assert r.rmse == 1 and r.mean_err == 1 and r.max_err == 1
    assert abs(r.mape - 100 / 350) < 1e-12 and abs(r.pape - 100 / 350) < 1e-12


def test_metrics_two_cell_hand_example():
    r = compute_metrics(np.array([301.0, 398.0]), np.array([300.0, 400.0]))
    assert abs(r.rmse - math.sqrt(2.5)) < 1e-9
    assert abs(r.mape - (1 / 300 + 2 / 400) / 2 * 100) < 1e-9
    assert abs(r.pape - 0.5) < 1e-9
    assert abs(r.max_err - 2) < 1e-9
    assert abs(r.mean_err - 1.5) < 1e-9


def test_metrics_errors():
    with pytest.raises(ShapeError):
        compute_metrics(np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        compute_metrics(np.ones(2), np.array([1.0, 0.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10 ** 6))
def test_metric_invariants_and_json_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(300, 400, (n, 2, 4, 4))
    p = t + rng.normal(0, 2, t.shape)
    r = compute_metrics(p, t)
    assert min(r.rmse, r.mape, r.pape, r.max_err, r.mean_err) >= 0
    assert r.pape >= r.mape and r.rmse >= r.mean_err - 1e-12
    assert MetricsReport.from_json(r.to_json()) == r


def test_pooled_values_only_when_they_diverge():
    t = np.full((2, 1, 2, 2), 300.0)
    p = t.copy()
    p[0] += 10.0  # one bad sample: pooled RMSE differs from the per-sample mean
    r = compute_metrics(p, t)
    assert r.rmse == pytest.approx(5.0) and r.pooled["rmse"] == pytest.approx(math.sqrt(50))
    assert compute_metrics(t + 1, t).pooled is None


# -- heatmap -------------------------------------------------------------------------------

def test_colormap_runs_blue_to_red():
    cm = colormap()
    assert cm.shape == (256, 3)
    assert cm[0, 2] > cm[0, 0] and cm[-1, 0] > cm[-1, 2]


def test_uniform_field_one_colour(tmp_path):
    render_heatmap(np.full((3, 5), 7.0), tmp_path / "u.ppm", scale=2)
    img = read_ppm(tmp_path / "u.ppm")
    assert img.shape == (6, 10, 3)
    assert len(np.unique(img.reshape(-1, 3), axis=0)) == 1
    assert sidecar_path(tmp_path / "u.ppm").read_text() == "min 7.0\nmax 7.0\n"


def test_heatmap_deterministic_and_scaled(tmp_path):
    f = np.random.default_rng(0).uniform(300, 330, (4, 7))
    render_heatmap(f, tmp_path / "a.ppm", scale=3)
    render_heatmap(f, tmp_path / "b.ppm", scale=3)
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
    img = read_ppm(tmp_path / "a.ppm")
    assert img.shape == (12, 21, 3)
    hot = np.unravel_index(f.argmax(), f.shape)
    assert tuple(img[hot[0] * 3, hot[1] * 3]) == tuple(colormap()[-1])


def test_heatmap_bad_inputs(tmp_path):
    with pytest.raises(ValueError):
        render_heatmap(np.ones((2, 2)), tmp_path / "x.ppm", scale=0)
    with pytest.raises(OSError):
        render_heatmap(np.ones((2, 2)), tmp_path / "missing_dir" / "x.ppm")


# -- benchmark ---------------------------------------------------------------------------

def test_benchmark_report_fields():
    stack = build_stack("chip1", 16)
    nz = Normalizer([0.0, 0.0], [1e8, 1e8], [5.0, 5.0], [2.0, 2.0], 298.15)
    rep = benchmark(SAUFNO(TINY), stack, 3, nz)
    assert rep.oracle_mean_s > 0 and rep.inference_mean_s > 0
    assert rep.speedup == pytest.approx(rep.oracle_mean_s / rep.inference_mean_s)
    assert rep.resolution == [16, 16] and rep.n_samples == 3
    with pytest.raises(TooFewSamples):
        benchmark(SAUFNO(TINY), stack, 0, nz)


# -- CLI ----------------------------------------------------------------------------------

def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_data_twice_identical(tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = run(capsys, "gen-data", "--chip", "chip1", "--n", 5, "--res", 16, "--seed", 7,
                         "--out", tmp_path / f"{name}.thrm")
        assert code == 0
    assert (tmp_path / "a.thrm").read_bytes() == (tmp_path / "b.thrm").read_bytes()


def test_evaluate_identical_predictions_gives_zero(tmp_path, capsys):
    run(capsys, "gen-data", "--chip", "chip1", "--n", 5, "--res", 16, "--seed", 1, "--out", tmp_path / "d.thrm")
    code, out, _ = run(capsys, "evaluate", "--pred", tmp_path / "d.thrm", "--data", tmp_path / "d.thrm",
                       "--report", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert all(rep[k] == 0 for k in ("rmse", "mape", "pape", "max_err", "mean_err"))
    assert {"n_samples", "resolution", "runtime_s"} <= set(rep)


def test_full_pipeline_smoke(tmp_path, capsys):
    data = tmp_path / "d.thrm"
    assert run(capsys, "gen-data", "--chip", "chip1", "--n", 20, "--res", 16, "--seed", 3, "--out", data)[0] == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": TINY.to_dict(), "train": {"lr": 1e-3, "epochs": 5, "batch_size": 4}}))
    assert run(capsys, "train", "--data", data, "--config", cfg, "--out", tmp_path / "m.sauf")[0] == 0
    code, out, _ = run(capsys, "evaluate", "--ckpt", tmp_path / "m.sauf", "--data", data,
                       "--report", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert all(math.isfinite(rep[k]) for k in ("rmse", "mape", "pape", "max_err", "mean_err"))

    run(capsys, "gen-data", "--chip", "chip1", "--n", 5, "--res", 32, "--seed", 4, "--out", tmp_path / "h.thrm")
    assert run(capsys, "finetune", "--ckpt", tmp_path / "m.sauf", "--data", tmp_path / "h.thrm", "--epochs", 1,
               "--out", tmp_path / "f.sauf")[0] == 0
    code, _, _ = run(capsys, "predict", "--ckpt", tmp_path / "f.sauf", "--power", tmp_path / "h.thrm",
                     "--heatmap", tmp_path / "maps", "--scale", 2)
    assert code == 0
    assert read_ppm(tmp_path / "maps" / "sample000_layer1.ppm").shape == (64, 64, 3)
    assert np.load(tmp_path / "maps" / "prediction.npy").shape == read_thrm(tmp_path / "h.thrm").power.shape
    code, out, _ = run(capsys, "benchmark", "--ckpt", tmp_path / "m.sauf", "--chip", "chip1", "--res", 16,
                       "--n", 3)
    assert code == 0 and json.loads(out)["n_samples"] == 3


def test_train_is_bit_reproducible(tmp_path, capsys):
    data = tmp_path / "d.thrm"
    run(capsys, "gen-data", "--chip", "chip1", "--n", 6, "--res", 16, "--seed", 2, "--out", data)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(dict(TINY.to_dict(), lr=1e-3, epochs=2, batch_size=2, seed=4)))
    for name in ("a", "b"):
        assert run(capsys, "train", "--data", data, "--config", cfg, "--out", tmp_path / f"{name}.sauf")[0] == 0
    assert (tmp_path / "a.sauf").read_bytes() == (tmp_path / "b.sauf").read_bytes()


def test_errors_are_machine_parsable(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--chip", "chipX", "--n", 1, "--res", 16, "--out", tmp_path / "x")
    assert code == 1 and err.strip() == "error: UnknownChip: unknown chip id 'chipX'; expected one of " \
        "['chip1', 'chip2', 'chip3']"
    code, _, err = run(capsys, "evaluate", "--ckpt", tmp_path / "none.sauf", "--data", tmp_path / "x")
    assert code == 1 and err.startswith("error: ")
    code, _, err = run(capsys, "benchmark", "--ckpt", tmp_path / "none.sauf", "--chip", "chip1", "--res", 16)
    assert err.startswith("error: CheckpointNotFound:")


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["gen-data", "--chip", "chip1", "--bogus"])
    assert info.value.code == 2
