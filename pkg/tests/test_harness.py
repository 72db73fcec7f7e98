import json
from dataclasses import replace

import numpy as np
import pytest

from gcfprod import cli, gcf, harness
from gcfprod.config import ConfigError, StudyConfig, dump_config, load_config, parse_lines, study_from_entries
from gcfprod.dgp import DGPConfig, simulate_panel

TINY = StudyConfig(dgp=DGPConfig(n_firms=120, n_periods=6, burn_in=5), n_replications=3,
                   degrees=(2,), baseline=False, output_dir="", master_seed=7)


# -- config ----------------------------------------------------------------------------

def test_parse_config_text():
    text = """
    # comment
    dgp.n_firms = 250   # trailing comment
    dgp.structural.alpha = 0.4
    dgp.shock_d1.variance = 16
    study.n_replications = 3
    study.degrees = 2, 3, 5
    study.baseline = false
    """
    cfg = study_from_entries(parse_lines(text.splitlines()))
    assert cfg.dgp.n_firms == 250
    assert cfg.dgp.structural.alpha == 0.4
    assert cfg.dgp.shock_d1.variance == 16.0
    assert cfg.degrees == (2, 3, 5)
    assert cfg.estimators == ["gcf-d2", "gcf-d3", "gcf-d5"]


@pytest.mark.parametrize("line", ["dgp.n_frims = 3", "study.colour = red", "dgp.structural.beta = 1",
                                  "dgp.shock_x.variance = 1", "other.key = 1", "noequals"])
def test_unknown_keys_rejected(line):
    with pytest.raises(ConfigError):
        study_from_entries(parse_lines([line]))


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError):
        parse_lines(["dgp.seed = 1", "dgp.seed = 2"])


def test_invalid_values_rejected():
    for line in ["study.n_replications = 0", "dgp.shock_pV.autocorr = 1.0",
                 "study.weighting = magic", "dgp.law_of_motion.rho_omega = 0.5"]:
        with pytest.raises(ConfigError):
            study_from_entries(parse_lines([line]))


def test_dump_load_round_trip(tmp_path):
    cfg = replace(TINY, degrees=(2, 4), baseline=True)
    path = tmp_path / "study.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_replication_seeds():
    a = [harness.replication_seed(1, r) for r in range(100)]
    assert a == [harness.replication_seed(1, r) for r in range(100)]
    assert len(set(a)) == 100
    assert harness.replication_seed(2, 0) != a[0]


# -- study -------------------------------------------------------------------------------

def test_single_replication_matches_direct_estimate():
    cfg = replace(TINY, n_replications=1)
    summary = harness.run_study(cfg)
    seed = harness.replication_seed(cfg.master_seed, 0)
    panel = simulate_panel(replace(cfg.dgp, seed=seed), keep_latents=False)
    direct = gcf.estimate(panel, gcf.InstrumentPlan(control_degree=2))
    rec = summary.records[0]
    assert rec["avg_log_markup"] == direct.avg_log_markup
    assert summary.estimators["gcf-d2"].bias == direct.avg_log_markup - 0.25


def test_parallel_width_does_not_matter(tmp_path):
    a = harness.run_study(TINY, out_dir=tmp_path / "a", jobs=1)
    b = harness.run_study(TINY, out_dir=tmp_path / "b", jobs=2)
    assert a.to_dict() == b.to_dict()
    for name in ("replications.csv", "summary.json", "histogram.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_aggregation_from_csv(tmp_path):
    summary = harness.run_study(replace(TINY, baseline=True), out_dir=tmp_path)
    rows = harness.read_replications(tmp_path / "replications.csv")
    saved = json.loads((tmp_path / "summary.json").read_text())["estimators"]
    for name in ("gcf-d2", "baseline"):
        vals = np.array([r["avg_log_markup"] for r in rows
                         if r["estimator"] == name and r["status"] == "ok"])
        assert saved[name]["bias"] == pytest.approx(np.mean(vals - 0.25), abs=1e-12)
        assert saved[name]["mse"] == pytest.approx(np.mean((vals - 0.25) ** 2), abs=1e-12)
        assert saved[name]["n"] + saved[name]["failures"] == TINY.n_replications
    assert summary.estimators["baseline"].n == TINY.n_replications


def test_histogram_counts(tmp_path):
    harness.run_study(TINY, out_dir=tmp_path)
    lines = (tmp_path / "histogram.csv").read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,gcf-d2"
    assert sum(int(line.split(",")[2]) for line in lines[1:]) == TINY.n_replications


def test_failures_are_counted():
    recs = [{"estimator": "x", "status": "ok", "avg_log_markup": 0.3, "converged": True},
            {"estimator": "x", "status": "failed"},
            {"estimator": "x", "status": "ok", "avg_log_markup": 0.2, "converged": False}]
    s = harness.aggregate(recs, ["x"]).estimators["x"]
    assert (s.n, s.failures, s.nonconverged) == (2, 1, 1)
    assert s.bias == pytest.approx(0.0, abs=1e-15)
    assert s.mse == pytest.approx(0.0025)


def test_failed_estimator_is_recorded(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("boom")
    monkeypatch.setattr(harness, "run_estimator", boom)
    recs = harness.run_replication(TINY, 0)
    assert recs[0]["status"] == "failed" and "boom" in recs[0]["error"]


# -- report and CLI ------------------------------------------------------------------------

def test_report_rows():
    text = harness.format_report({"estimators": {
        "gcf-d2": dict(mean=0.3, bias=0.05, mse=0.003, n=50, failures=0),
        "gcf-d4": dict(mean=0.25, bias=0.0, mse=0.001, n=50, failures=1)}})
    lines = text.splitlines()
    assert len(lines) == 4 and lines[2].startswith("gcf-d2") and lines[3].startswith("gcf-d4")


def test_report_header_only():
    assert len(harness.format_report({"estimators": {}}).splitlines()) == 2


def write_cfg(path, **extra):
    lines = ["dgp.n_firms = 80", "dgp.n_periods = 5", "dgp.burn_in = 5",
             "study.n_replications = 2", "study.degrees = 2", "study.baseline = false"]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_cli_end_to_end(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "s.cfg")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim"),
                     "--keep-latents"]) == 0
    panel = tmp_path / "sim" / "panel.csv"
    assert panel.exists()
    out = tmp_path / "est.json"
    assert cli.main(["estimate", "--panel", str(panel), "--method", "gcf", "--degree", "2",
                     "--out", str(out)]) == 0
    assert gcf.EstimationResult.from_json(out).degree == 2
    assert cli.main(["montecarlo", "--config", str(cfg), "--out", str(tmp_path / "mc"),
                     "--jobs", "1"]) == 0
    capsys.readouterr()
    assert cli.main(["report", "--summary", str(tmp_path / "mc" / "summary.json")]) == 0
    assert "gcf-d2" in capsys.readouterr().out


def test_cli_usage_errors(tmp_path):
    assert cli.main([]) == 1
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.cfg"), "--out", "x"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("dgp.wrong = 1\n")
    assert cli.main(["montecarlo", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["report", "--summary", str(tmp_path / "none.json")]) == 1
    corrupt = tmp_path / "corrupt.json"
    corrupt.write_text("[1, 2]")
    assert cli.main(["report", "--summary", str(corrupt)]) != 0
    assert cli.main(["estimate", "--panel", "p.csv", "--method", "ols", "--out", "x"]) == 1


def test_cli_runtime_failure(tmp_path):
    broken = tmp_path / "panel.csv"
    broken.write_text("firm_id,period,q\n1,1,0.5\n")
    assert cli.main(["estimate", "--panel", str(broken), "--out", str(tmp_path / "e.json")]) == 2


def test_cli_infeasible_targets(tmp_path):
    cfg = write_cfg(tmp_path / "inf.cfg", **{"dgp.targets.corr_omega_delta1": 0.95})
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
