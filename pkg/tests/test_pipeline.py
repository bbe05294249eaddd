import json

import numpy as np
import pytest

from musicnet import cli, suites
from musicnet.data import ChannelSeries, IsmtsInstance, SynthSpec, align, substream, synth_generate
from musicnet.pipeline import (
    DataError,
    MuSiCNet,
    RunConfig,
    build_correlation,
    corr_dump,
    corr_hash,
    evaluate_checkpoint,
    evaluate_interpolation,
    forecast_view,
    read_matrix_csv,
    reveal_split,
    train,
    write_matrix_csv,
)

SMALL = dict(epochs=2, batch_size=4, d_model=8, max_refs=8, heads=2, embed_dim=4, gru_hidden=4)


def small_config(task="classify", n=8, **kw):
    spec = suites.two_frequency_classes(n_instances=n, rate=(0.2, 0.4))
    return RunConfig(task=task, synth=spec, split_ratios=(0.5, 0.0, 0.5), **{**SMALL, **kw})


def test_smoke_run_writes_artifacts(tmp_path):
    st = train(small_config(), out_dir=tmp_path)
    rep = st.report
    assert len(rep.epochs) == 2
    assert set(rep.metrics) >= {"auroc", "auprc", "accuracy", "precision", "recall", "f1"}
    for name in ("checkpoint.npz", "report.json", "losses.csv", "corr_lspdtw.csv", "corr_lspdtw_distances.csv"):
        assert (tmp_path / name).exists(), name
    # strict JSON: undefined metrics are null, never NaN
    report = json.loads((tmp_path / "report.json").read_text(), parse_constant=lambda c: pytest.fail(c))
    assert report["config"]["epochs"] == 2
    assert len((tmp_path / "losses.csv").read_text().splitlines()) == 3


def test_seeded_runs_are_bitwise_identical():
    a = train(small_config(seed=3), evaluate=False)
    b = train(small_config(seed=3), evaluate=False)
    assert a.report.epochs == b.report.epochs
    for k in a.model.params:
        assert np.array_equal(a.model.params[k].data, b.model.params[k].data)
    c = train(small_config(seed=4), evaluate=False)
    assert c.report.epochs != a.report.epochs


def test_report_rows_recombine():
    st = train(small_config(), evaluate=False)
    L = st.report.n_scales
    for row in st.report.epochs:
        want = row["recon"] / L + row["adj"] / (L - 1) + row["cons"] / (L - 1) + row["task"]
        assert row["total"] == pytest.approx(want, rel=1e-9)


def test_correlation_fixed_from_training_split():
    st = train(small_config(), evaluate=False)
    fresh = build_correlation("lsp-dtw", st.prepared.subset("train"))
    assert st.report.corr_hash == corr_hash(fresh) == corr_hash(st.model.corr)


def test_checkpoint_round_trip(tmp_path):
    st = train(small_config(), out_dir=tmp_path)
    model, meta = MuSiCNet.load(tmp_path / "checkpoint.npz")
    for k, p in st.model.params.items():
        assert np.array_equal(model.params[k].data, p.data)
    assert np.array_equal(model.corr.weights, st.model.corr.weights)
    insts = [align(i) for i in st.prepared.subset("test")]
    assert np.array_equal(model.predict_proba(insts), st.model.predict_proba(insts))
    again = evaluate_checkpoint(tmp_path / "checkpoint.npz")
    assert again == st.report.metrics
    assert meta["config"]["seed"] == 0


def test_metrics_only_for_declared_task():
    st = train(small_config(task="interpolate"))
    assert "mse" in st.report.metrics and "auroc" not in st.report.metrics
    assert st.report.metrics["baseline_mse"] > 0


def test_reveal_split_partitions():
    data = synth_generate(SynthSpec.from_dict(suites.sinusoid_mixture(3)), 0)
    a = align(data[0])
    rev, hid = reveal_split(a, 0.5, substream(0, "reveal", 0))
    assert not np.any(rev & hid)
    assert np.array_equal(rev | hid, a.obs_mask)
    assert abs(int(rev.sum()) - round(0.5 * a.obs_mask.sum())) <= 0


def test_interpolation_needs_hidden_targets():
    st = train(small_config(task="interpolate"), evaluate=False)
    with pytest.raises(DataError, match="no hidden targets"):
        evaluate_interpolation(st.model, st.prepared.subset("test"), 1.0)


def test_interpolation_skips_tiny_instances():
    st = train(small_config(task="interpolate"), evaluate=False)
    tiny = IsmtsInstance(tuple(ChannelSeries([1.0], [0.5]) if d == 0 else ChannelSeries([], []) for d in range(4)))
    out = evaluate_interpolation(st.model, st.prepared.subset("test") + [tiny], 0.5)
    assert out["skipped"] == 1


def test_forecast_view_horizon():
    inst = IsmtsInstance(
        (ChannelSeries(np.arange(10.0), np.arange(10.0)), ChannelSeries([2.5, 8.5], [1.0, 2.0])), span=(0.0, 9.0)
    )
    v = forecast_view(inst, 0.5, 3)
    assert v.target_times.shape == (3,)
    assert v.target_values.shape == (3, 2)
    assert np.all(v.target_times >= 1.0)
    assert v.history.grid.max() < 4.5
    assert forecast_view(inst, 0.999, 3).target_times.shape == (1,)
    assert forecast_view(inst, 0.0, 3) is None  # empty history


def test_forecast_constant_series():
    spec = {
        "n_instances": 12,
        "span": 20.0,
        "rate_range": [0.5, 1.0],
        "noise": 0.0,
        "classes": [{"channels": [[[0.0, 0.1, 0.0]], [[0.0, 0.1, 0.0]]]}],
    }
    cfg = RunConfig(
        task="forecast",
        synth=spec,
        split_ratios=(0.75, 0.0, 0.25),
        **{**SMALL, "epochs": 60, "base_lr": 1e-2},
    )
    m = train(cfg).report.metrics
    assert m["mse"] < 1e-2
    assert m["n_targets"] > 0 and "baseline_mse" in m


def test_matrix_csv_round_trip(tmp_path):
    w = np.random.default_rng(0).random((3, 3)) / 7
    write_matrix_csv(w, tmp_path / "m.csv")
    assert np.array_equal(read_matrix_csv(tmp_path / "m.csv"), w)


def test_corr_dump_identical_channels(tmp_path):
    base = synth_generate(SynthSpec.from_dict(suites.two_frequency_classes(6, n_channels=1)), 0)
    data = [IsmtsInstance((i.channels[0], i.channels[0]), i.label, i.id, i.span) for i in base]
    mats = corr_dump(small_config(), tmp_path, dataset=data)
    np.testing.assert_array_equal(mats["lsp-dtw"].weights, np.ones((2, 2)))
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "corr_lspdtw.csv"), np.ones((2, 2)))
    assert np.array_equal(read_matrix_csv(tmp_path / "corr_idtw.csv"), mats["i-dtw"].weights)


# --- command line --------------------------------------------------------------------


def _config_file(tmp_path, **kw):
    d = small_config(**kw).to_dict()
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


def test_cli_round_trip(tmp_path, capsys):
    cfg = _config_file(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out), "--seed", "1"]) == 0
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint.npz"), "--out", str(out)]) == 0
    assert (out / "eval_test.json").exists()
    assert cli.main(["corr-dump", "--config", str(cfg), "--out", str(tmp_path / "corr")]) == 0
    assert (tmp_path / "corr" / "corr_idtw.csv").exists()
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    assert (tmp_path / "data" / "observations.csv").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seed"] == 1
    capsys.readouterr()


def test_cli_train_from_csv(tmp_path):
    cfg = _config_file(tmp_path)
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    d = json.loads(cfg.read_text())
    d.update(synth=None, observations=str(tmp_path / "data" / "observations.csv"), labels=str(tmp_path / "data" / "labels.csv"))
    cfg.write_text(json.dumps(d))
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0


def test_cli_config_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"task": "classify", "synth": {}, "nonsense": 1}))
    assert cli.main(["train", "--config", str(p), "--out", str(tmp_path)]) == 1
    p.write_text(json.dumps({"task": "regress", "synth": suites.sinusoid_mixture(4)}))
    assert cli.main(["train", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_data_error(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"task": "interpolate", "observations": str(tmp_path / "missing.csv")}))
    assert cli.main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "obs.csv"
    bad.write_text("instance_id,channel,time,value\na,0,1,1\na,2,1,1\n")
    p.write_text(json.dumps({"task": "interpolate", "observations": str(bad)}))
    assert cli.main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "non-contiguous" in capsys.readouterr().err


def test_cli_divergence(tmp_path, monkeypatch, capsys):
    from musicnet import pipeline
    from musicnet.tensor import Tensor

    real = pipeline.MuSiCNet.losses

    def poisoned(self, *a, **k):
        total, parts = real(self, *a, **k)
        return total * Tensor(np.nan), parts

    monkeypatch.setattr(pipeline.MuSiCNet, "losses", poisoned)
    cfg = _config_file(tmp_path)
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "epoch 1, step 0" in capsys.readouterr().err


@pytest.mark.parametrize("name", ["classify", "interpolate"])
def test_demo_configs_validate(name):
    from pathlib import Path

    cfg = RunConfig.from_file(Path(__file__).parents[1] / "demos" / "configs" / f"{name}.json")
    cfg.validate()
    assert cfg.task == name
