"""Command-line entry points for batch runs, plotting, and re-verification.

Usage:
    windtakeoff run --trial 3 --seeds 5 --out runs/
    windtakeoff run --config scenario.json
    windtakeoff plots --run runs/trial3
    windtakeoff verify --run runs/trial3

The default output root comes from the WINDTAKEOFF_OUT environment
variable (falling back to ./runs).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .harness import OUTPUT_ROOT_ENV, TrialConfig, emit_plots, run_trial, verify_run


def _default_out_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _cmd_run(args) -> int:
    if (args.trial is None) == (args.config is None):
        print("error: pass exactly one of --trial or --config", file=sys.stderr)
        return 2
    if args.trial is not None:
        cfg = TrialConfig.preset(args.trial)
        run_name = f"trial{args.trial}"
    else:
        with open(args.config) as fh:
            cfg = TrialConfig.from_json(fh.read())
        run_name = os.path.splitext(os.path.basename(args.config))[0]
    if args.seeds is not None:
        cfg = replace(cfg, seeds=tuple(range(args.seeds)))

    out_dir = args.out if args.out else os.path.join(_default_out_root(), run_name)
    result = run_trial(cfg, out_dir, workers=args.workers)
    agg = result.aggregates
    print(f"run complete: {out_dir}")
    print(
        f"seeds={agg['n_seeds']} converged={agg['n_converged']} "
        f"verified={agg['n_verified']}"
    )
    if agg["median_cost_s"] is not None:
        print(
            f"median cost = {agg['median_cost_s']:.4f} s, "
            f"median final error = {agg['median_final_error_m']:.4f} m, "
            f"median estimate rmse = {agg['median_est_rmse_mps']:.4f} m/s"
        )
    return 0


def _cmd_plots(args) -> int:
    written = emit_plots(args.run)
    print(f"wrote {len(written)} plot files under {os.path.join(args.run, 'plots')}")
    return 0


def _cmd_verify(args) -> int:
    outcomes = verify_run(args.run)
    failures = 0
    for rec in outcomes:
        if rec["status"] != "ok":
            print(f"seed {rec['seed']}: {rec['status']}")
            failures += 1
            continue
        tag = "PASS" if rec["passed"] else "FAIL"
        note = "" if rec["matches_stored"] in (None, True) else " (differs from stored result)"
        print(
            f"seed {rec['seed']}: {tag} waypoint miss {rec['waypoint_miss_m']:.4f} m, "
            f"final error {rec['final_error_m']:.4f} m{note}"
        )
        if not rec["passed"]:
            failures += 1
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="windtakeoff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a trial (preset or config file)")
    run_p.add_argument("--trial", type=int, choices=range(1, 7), help="preset trial number")
    run_p.add_argument("--config", type=str, help="JSON scenario file")
    run_p.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    run_p.add_argument("--out", type=str, help="output directory")
    run_p.add_argument("--workers", type=int, default=1, help="worker processes")
    run_p.set_defaults(func=_cmd_run)

    plots_p = sub.add_parser("plots", help="emit panel CSVs for a finished run")
    plots_p.add_argument("--run", type=str, required=True, help="run directory")
    plots_p.set_defaults(func=_cmd_plots)

    verify_p = sub.add_parser("verify", help="re-run replay verification for a run")
    verify_p.add_argument("--run", type=str, required=True, help="run directory")
    verify_p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
