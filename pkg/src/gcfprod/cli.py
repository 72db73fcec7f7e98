"""Command line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import baseline, gcf, harness
from .config import ConfigError, StudyConfig, load_config
from .dgp import InfeasibleTargetsError, load_panel, save_panel, simulate_panel


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _cmd_simulate(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel = simulate_panel(cfg.dgp, keep_latents=args.keep_latents)
    path = save_panel(panel, out / "panel.csv")
    print(path)


def _cmd_estimate(args):
    if not Path(args.panel).exists():
        raise UsageError(f"panel file {args.panel} not found")
    panel = load_panel(args.panel)
    weighting = args.weighting
    if weighting == "auto":
        weighting = "oracle" if panel.config is not None else "two_step"
    options = gcf.EstimateOptions(weighting=weighting)
    if args.method == "gcf":
        res = gcf.estimate(panel, gcf.InstrumentPlan(control_degree=args.degree), options)
    else:
        res = baseline.estimate_baseline(panel, baseline.BaselineConfig(g_degree=args.degree),
                                         options)
    res.to_json(args.out)
    print(f"avg_log_markup={res.avg_log_markup:.6f} converged={res.converged}")


def _cmd_montecarlo(args):
    cfg = load_config(args.config)
    summary = harness.run_study(cfg, out_dir=args.out, jobs=args.jobs)
    print(harness.format_report(summary.to_dict()))


def _cmd_report(args):
    path = Path(args.summary)
    if not path.exists():
        raise UsageError(f"summary file {path} not found")
    try:
        text = harness.report(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read summary {path}: {exc}") from exc
    print(text)


def _cmd_check_orthogonality(args):
    cfg: StudyConfig = load_config(args.config)
    panel = simulate_panel(cfg.dgp)
    plan = gcf.InstrumentPlan(control_degree=args.degree)
    table = gcf.build_lagged_frame(panel, plan)
    rep = gcf.check_neyman_orthogonality(cfg.dgp.structural, table, plan,
                                         n_directions=args.directions or cfg.orthogonality_directions)
    summary = rep.summary()
    print(json.dumps(summary, indent=2))
    if not (summary["orthogonal_pass_share"] == 1.0 and summary["plain_fail_share"] >= 0.9):
        raise RuntimeError("orthogonality contrast not observed")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gcfprod", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate one panel")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--keep-latents", action="store_true")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("estimate", help="estimate theta and the average log markup")
    s.add_argument("--panel", required=True)
    s.add_argument("--method", choices=("gcf", "baseline"), default="gcf")
    s.add_argument("--degree", type=int, default=4)
    s.add_argument("--weighting", choices=("auto", "oracle", "two_step", "identity"),
                   default="auto")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_estimate)

    s = sub.add_parser("montecarlo", help="run a Monte Carlo study")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=_cmd_montecarlo)

    s = sub.add_parser("report", help="print a study summary")
    s.add_argument("--summary", required=True)
    s.set_defaults(func=_cmd_report)

    s = sub.add_parser("check-orthogonality", help="Neyman orthogonality diagnostic")
    s.add_argument("--config", required=True)
    s.add_argument("--degree", type=int, default=4)
    s.add_argument("--directions", type=int, default=None)
    s.set_defaults(func=_cmd_check_orthogonality)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError, InfeasibleTargetsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
