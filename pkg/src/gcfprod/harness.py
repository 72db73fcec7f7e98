"""Monte Carlo study: simulate, estimate, aggregate bias and MSE.

Output files written by :func:`run_study`:

* ``replications.csv``: one row per (replication, estimator) with the seed,
  status, avg_log_markup, theta_hat and optimizer diagnostics.
* ``summary.json``: per-estimator mean, bias, MSE, counts and the study
  configuration.
* ``histogram.csv``: bin edges and per-estimator counts of avg_log_markup on
  a common grid, enough to redraw the distribution figure.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baseline as baseline_mod
from . import gcf
from .config import StudyConfig, dump_config
from .dgp import simulate_panel

log = logging.getLogger(__name__)

TRUE_AVG_LOG_MARKUP = 0.25

RECORD_FIELDS = ("replication", "seed", "estimator", "status", "avg_log_markup", "alpha",
                 "rho", "nu", "objective_value", "converged", "iterations",
                 "selected_moment_count", "error")


def replication_seed(master_seed: int, replication: int) -> int:
    ss = np.random.SeedSequence([master_seed, replication])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def run_estimator(name: str, panel, config: StudyConfig) -> gcf.EstimationResult:
    options = gcf.EstimateOptions(weighting=config.weighting)
    if name == "baseline":
        return baseline_mod.estimate_baseline(panel, options=options)
    if name.startswith("gcf-d"):
        plan = gcf.InstrumentPlan(control_degree=int(name[5:]))
        return gcf.estimate(panel, plan, options)
    raise ValueError(f"unknown estimator {name!r}")


def run_replication(config: StudyConfig, replication: int) -> list[dict]:
    seed = replication_seed(config.master_seed, replication)
    panel = simulate_panel(replace(config.dgp, seed=seed), keep_latents=False)
    records = []
    for name in config.estimators:
        rec = {"replication": replication, "seed": seed, "estimator": name}
        try:
            res = run_estimator(name, panel, config)
        except Exception as exc:  # recorded, never dropped
            log.error("replication %d (seed %d) %s failed: %s", replication, seed, name, exc)
            rec.update(status="failed", error=repr(exc))
        else:
            th = res.theta_hat
            rec.update(status="ok", avg_log_markup=res.avg_log_markup, alpha=th.alpha,
                       rho=th.rho, nu=th.nu, objective_value=res.objective_value,
                       converged=res.converged, iterations=res.iterations,
                       selected_moment_count=res.selected_moment_count, error="")
        records.append(rec)
    return records


@dataclass
class EstimatorSummary:
    mean: float
    bias: float
    mse: float
    n: int
    failures: int
    nonconverged: int


@dataclass
class MCSummary:
    estimators: dict[str, EstimatorSummary]
    records: list[dict] = field(default_factory=list)
    truth: float = TRUE_AVG_LOG_MARKUP

    def to_dict(self) -> dict:
        return {"true_avg_log_markup": self.truth,
                "estimators": {k: asdict(v) for k, v in self.estimators.items()}}


def aggregate(records, estimators, truth: float = TRUE_AVG_LOG_MARKUP) -> MCSummary:
    """bias = mean - truth and MSE = mean squared error over successful replications."""
    out = {}
    for name in estimators:
        rows = [r for r in records if r["estimator"] == name]
        ok = np.array([r["avg_log_markup"] for r in rows if r["status"] == "ok"], dtype=float)
        failures = sum(r["status"] != "ok" for r in rows)
        noncon = sum(r["status"] == "ok" and not r["converged"] for r in rows)
        if ok.size:
            err = ok - truth
            mean, bias, mse = float(ok.mean()), float(err.mean()), float(np.mean(err**2))
        else:
            mean = bias = mse = math.nan
        out[name] = EstimatorSummary(mean, bias, mse, int(ok.size), int(failures), int(noncon))
    return MCSummary(out, list(records), truth)


def histogram_table(records, estimators, bins: int = 30):
    values = {name: np.array([r["avg_log_markup"] for r in records
                              if r["estimator"] == name and r["status"] == "ok"])
              for name in estimators}
    pooled = np.concatenate([v for v in values.values() if v.size] or [np.array([0.25])])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    counts = {name: np.histogram(v, bins=edges)[0] for name, v in values.items()}
    return edges, counts


def write_outputs(summary: MCSummary, config: StudyConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "replications.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, extrasaction="ignore")
        w.writeheader()
        for rec in summary.records:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
    payload = summary.to_dict()
    payload["config"] = dump_config(config)
    (out / "summary.json").write_text(json.dumps(payload, indent=2))
    estimators = list(summary.estimators)
    edges, counts = histogram_table(summary.records, estimators)
    with open(out / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", *estimators])
        for i in range(len(edges) - 1):
            w.writerow([repr(edges[i]), repr(edges[i + 1]), *(int(counts[e][i]) for e in estimators)])
    return out


def run_study(config: StudyConfig, out_dir=None, jobs: int | None = None) -> MCSummary:
    """Simulate and estimate every replication, then aggregate and write outputs.

    Replications are independent given their seeds, so results do not depend
    on ``jobs``.
    """
    jobs = jobs or config.jobs
    reps = range(config.n_replications)
    if jobs == 1:
        chunks = [run_replication(config, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(run_replication, [config] * len(reps), reps))
    records = [rec for chunk in chunks for rec in chunk]
    summary = aggregate(records, config.estimators, config.true_avg_log_markup)
    out_dir = out_dir if out_dir is not None else config.output_dir
    if out_dir:
        write_outputs(summary, config, out_dir)
    return summary


def read_replications(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = dict(row)
            rec["replication"] = int(rec["replication"])
            rec["seed"] = int(rec["seed"])
            if rec["status"] == "ok":
                for k in ("avg_log_markup", "alpha", "rho", "nu", "objective_value"):
                    rec[k] = float(rec[k])
                rec["converged"] = rec["converged"] == "True"
            rows.append(rec)
    return rows


def format_report(summary: dict) -> str:
    header = f"{'estimator':<12} {'mean':>9} {'bias':>9} {'mse':>9} {'S':>5} {'failures':>9}"
    lines = [header, "-" * len(header)]
    for name, s in summary.get("estimators", {}).items():
        lines.append(f"{name:<12} {s['mean']:>9.4f} {s['bias']:>9.4f} {s['mse']:>9.4f} "
                     f"{s['n']:>5d} {s['failures']:>9d}")
    return "\n".join(lines)


def report(summary_path) -> str:
    path = Path(summary_path)
    summary = json.loads(path.read_text())
    if not isinstance(summary, dict) or not isinstance(summary.get("estimators"), dict):
        raise ValueError(f"{path} is not a study summary")
    return format_report(summary)
