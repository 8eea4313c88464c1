import csv
import io
import json
import math

import numpy as np
import pytest

from chainedbell import experiments, npa
from chainedbell.cli import main
from chainedbell.experiments import ExperimentConfig, InvalidConfig, run_experiment


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_gram_subcommand(tmp_path, capsys):
    assert main(["gram", "--n", "6", "--out-dir", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "gram.csv")[0]
    assert float(row["primal"]) == pytest.approx(6 * np.cos(np.pi / 6), abs=1e-5)
    assert row["status"] == "Optimal"
    assert "primal" in capsys.readouterr().out


def test_witness_subcommand(tmp_path):
    assert main(["witness", "--n", "3", "--out-dir", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "witness.csv")[0]
    assert float(row["threshold"]) == pytest.approx(0.76980, abs=1e-5)


def test_bound_subcommand(tmp_path):
    assert main(["bound", "--state", "werner:0.9", "--n", "3", "--out-dir", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "bound.csv")[0]
    assert float(row["bound"]) == pytest.approx(4.6765, abs=1e-4)
    assert row["state"] == "werner:0.9" and len(row["config_hash"]) == 16


def test_tightness_subcommand(tmp_path):
    assert main(["tightness", "--state", "xstate:0.7,0.6", "--n", "3",
                 "--out-dir", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "tightness.csv")[0]
    assert row["sufficient"] == "true"
    assert float(row["witness_value"]) == pytest.approx(float(row["bound"]), abs=1e-9)


@pytest.mark.parametrize("argv", [
    ["bound", "--bogus"],
    ["bound", "--state", "ghz"],
    ["fig1", "--nu-grid", "0.9,0.8"],
    ["fig1", "--nu-grid", "0.3"],
    ["fig2", "--level", "q7"],
    ["gram", "--n", "1"],
])
def test_config_errors_exit_one(argv, tmp_path):
    assert main(argv + ["--out-dir", str(tmp_path)]) == 1


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "bound", "colour": "red"}))
    assert main(["bound", "--config", str(cfg)]) == 1
    with pytest.raises(InvalidConfig, match="colour"):
        ExperimentConfig.from_json(cfg)


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "witness", "n": 5}))
    assert main(["witness", "--config", str(cfg), "--n", "2", "--out-dir", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "witness.csv")[0]
    assert float(row["threshold"]) == pytest.approx(1 / np.sqrt(2))


def test_config_for_other_experiment_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "gram"}))
    assert main(["witness", "--config", str(cfg)]) == 1


def test_empty_grid_rejected():
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict({"experiment": "fig1", "nu_grid": []})


def test_defaults_resolved():
    cfg = ExperimentConfig.from_dict({"experiment": "fig3_compare"})
    assert cfg.experiment == "fig3"
    assert len(cfg.p_grid) == 41 and cfg.p_grid[0] == 0.7 and cfg.p_grid[-1] == 1.0
    assert len(cfg.gamma_grid) == 13 and cfg.gamma_grid[-1] == pytest.approx(np.pi / 12)
    assert cfg.levels == ["1+ab"]
    cfg = ExperimentConfig.from_dict({"experiment": "fig1"})
    assert len(cfg.nu_grid) == 25 and 0.4 < cfg.nu_grid[0] and cfg.nu_grid[-1] < 1


def test_hash_ignores_runtime_fields():
    a = ExperimentConfig.from_dict({"experiment": "gram", "out_dir": "x", "workers": 3})
    b = ExperimentConfig.from_dict({"experiment": "gram", "out_dir": "y"})
    c = ExperimentConfig.from_dict({"experiment": "gram", "n": 4})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_fig1_sweep_and_cache(tmp_path):
    argv = ["fig1", "--nu-grid", "0.5,0.8", "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    first = (tmp_path / "fig1.csv").read_bytes()
    rows = read_csv(tmp_path / "fig1.csv")
    assert [float(r["nu"]) for r in rows] == [0.5, 0.8]
    for r in rows:
        assert abs(float(r["difference"])) <= 2e-3
        assert r["status"] == "ok"
    svg = (tmp_path / "fig1.svg").read_text()
    assert svg.startswith("<svg") and "href" not in svg
    report = run_experiment(ExperimentConfig.from_dict(
        {"experiment": "fig1", "nu_grid": [0.5, 0.8], "out_dir": str(tmp_path)}))
    assert report.cached
    assert (tmp_path / "fig1.csv").read_bytes() == first


def test_fig2_small_sweep(tmp_path):
    assert main(["fig2", "--p-grid", "0.76,0.9", "--level", "q1", "--workers", "1",
                 "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "fig2.csv")
    assert len(rows) == 4
    assert {r["mode"] for r in rows} == {"violation", "full"}
    assert all(r["setting"] == "A1B1" and r["level"] == "q1" for r in rows)
    low = [r for r in rows if float(r["p"]) == 0.76]
    assert all(float(r["min_entropy"]) == pytest.approx(0, abs=1e-5) for r in low)


def test_fig2_min_over_settings(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "experiment": "fig2", "p_grid": [0.95], "levels": ["q1"], "modes": ["full"],
        "settings": [[1, 1], [1, 2]], "out_dir": str(tmp_path), "workers": 1})
    rows = run_experiment(cfg).tables["fig2"]
    agg = [r for r in rows if r["setting"] == "min"]
    assert len(agg) == 1
    assert agg[0]["min_entropy"] == min(r["min_entropy"] for r in rows if r["setting"] != "min")


def test_failed_point_is_isolated(tmp_path, monkeypatch):
    real = npa.max_prob_given_violation

    def flaky(s, coeffs, value, target, level, **kw):
        if value > 4.5:
            raise npa.Infeasible("injected")
        return real(s, coeffs, value, target, level, **kw)

    monkeypatch.setattr(npa, "max_prob_given_violation", flaky)
    code = main(["fig2", "--p-grid", "0.8,0.9", "--level", "q1", "--mode", "violation",
                 "--workers", "1", "--no-cache", "--out-dir", str(tmp_path)])
    assert code == 2
    rows = read_csv(tmp_path / "fig2.csv")
    assert len(rows) == 2
    assert rows[0]["status"] == "Optimal"
    assert rows[1]["status"].startswith("Infeasible") and rows[1]["p_guess"] == "nan"


def test_nan_only_with_non_optimal_status(tmp_path):
    cfg = ExperimentConfig.from_dict({"experiment": "fig2", "p_grid": [0.8], "levels": ["q1"],
                                      "out_dir": str(tmp_path), "workers": 1})
    for r in run_experiment(cfg).tables["fig2"]:
        if any(isinstance(v, float) and math.isnan(v) for v in r.values()):
            assert r["status"] != "Optimal"


def test_least_predictable_setting():
    from chainedbell.chained import ideal_behavior
    assert experiments.least_predictable_setting(ideal_behavior(2)) == (0, 0)
    assert experiments.least_predictable_setting(ideal_behavior(3)) == (0, 1)
    assert experiments.least_predictable_setting(ideal_behavior(5)) == (0, 2)


def test_cache_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(experiments.CACHE_ENV, str(tmp_path / "elsewhere"))
    run_experiment(ExperimentConfig.from_dict({"experiment": "witness",
                                               "out_dir": str(tmp_path / "out")}))
    assert list((tmp_path / "elsewhere").glob("witness-*.json"))
