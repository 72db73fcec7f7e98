"""Run a Monte Carlo study from a config file and print the bias/MSE table.

    python3 scripts/run_study.py configs/desk.cfg --jobs 4

With the desk config the script also checks the expected ordering: d=4 nearly
unbiased, d=2 worse on both bias and MSE, baseline biased upward.
"""
import argparse
import logging
import time

from gcfprod import harness
from gcfprod.config import load_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    summary = harness.run_study(cfg, out_dir=args.out, jobs=args.jobs)
    print(harness.format_report(summary.to_dict()))
    print(f"\n{cfg.n_replications} replications in {time.perf_counter() - t0:.0f}s, "
          f"outputs in {args.out or cfg.output_dir}")
    e = summary.estimators
    if {"gcf-d2", "gcf-d4", "baseline"} <= set(e):
        d2, d4, bl = e["gcf-d2"], e["gcf-d4"], e["baseline"]
        print(f"|bias d4| <= 0.03: {abs(d4.bias) <= 0.03}")
        print(f"d2 worse than d4 (bias and MSE): {abs(d2.bias) > abs(d4.bias) and d2.mse > d4.mse}")
        print(f"baseline bias >= 0.05 and >= 5 |bias d4|: "
              f"{bl.bias >= 0.05 and bl.bias >= 5 * abs(d4.bias)}")


if __name__ == "__main__":
    main()
