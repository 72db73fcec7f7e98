"""Numerical Neyman-orthogonality contrast on one simulated panel.

    python3 scripts/orthogonality_check.py --firms 5000 --directions 20
"""
import argparse
import json
from dataclasses import replace

from gcfprod import ces, gcf
from gcfprod.dgp import DGPConfig, simulate_panel


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--firms", type=int, default=5000)
    ap.add_argument("--degree", type=int, default=4)
    ap.add_argument("--directions", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    panel = simulate_panel(replace(DGPConfig(), n_firms=args.firms, seed=args.seed),
                           keep_latents=False)
    plan = gcf.InstrumentPlan(control_degree=args.degree)
    table = gcf.build_lagged_frame(panel, plan)
    rep = gcf.check_neyman_orthogonality(ces.DEFAULT_THETA, table, plan,
                                         n_directions=args.directions)
    print(json.dumps(rep.summary(), indent=2))


if __name__ == "__main__":
    main()
