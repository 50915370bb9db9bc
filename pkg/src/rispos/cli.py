"""Command-line entry points for simulation sweeps, bounds, and debugging."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .errors import RisposError


def _load_config(args) -> harness.ExperimentConfig:
    if getattr(args, "config", None):
        exp = harness.ExperimentConfig.from_file(args.config)
    else:
        exp = harness.ExperimentConfig()
    if getattr(args, "trials", None) is not None:
        exp.n_trials = args.trials
    if getattr(args, "powers", None):
        exp.powers_dbm = [float(p) for p in args.powers]
    if getattr(args, "workers", None) is not None:
        exp.workers = args.workers
    if getattr(args, "out", None):
        exp.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        exp.master_seed = args.seed
    return exp


def _cmd_simulate(args) -> int:
    exp = _load_config(args)
    report = harness.run_sweep(exp)
    summary = harness.write_summary_csv(report, f"{exp.out_dir}/sweep_summary.csv")
    paths = harness.emit_plot_data(report, exp.out_dir)
    print(f"wrote {summary}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_sweep(args) -> int:
    exp = _load_config(args)
    report = harness.run_sweep(exp)
    summary = harness.write_summary_csv(report, f"{exp.out_dir}/sweep_summary.csv")
    print(f"wrote {summary}")
    return 0


def _cmd_bounds(args) -> int:
    exp = _load_config(args)
    rows = ["power_dbm," + ",".join(
        f"bound_{c}" for c in list(harness.CHANNEL_CLASSES)
        + ["position", "orientation"])]
    for p in exp.powers_dbm:
        ref = harness.reference_bounds(exp, p)
        rows.append(",".join([f"{p:.12e}"] + [
            f"{ref[c]:.12e}" for c in list(harness.CHANNEL_CLASSES)
            + ["position", "orientation"]]))
    print("\n".join(rows))
    return 0


def _cmd_trial(args) -> int:
    exp = _load_config(args)
    rec = harness.run_trial(exp, args.power, 0, args.trial)
    out = {
        "power_dbm": rec.power_dbm,
        "seed_entropy": list(rec.seed_entropy),
        "error": rec.error,
        "support_ok": rec.support_ok,
        "flags": {k: (v if isinstance(v, (bool, str, int, float)) else str(v))
                  for k, v in rec.flags.items()},
        "peb_m": rec.peb,
        "oeb_deg": float(np.rad2deg(rec.oeb)),
        "stages": {k: np.asarray(v).tolist() for k, v in rec.stages.items()},
        "sq_errors": {s: {c: np.asarray(v).tolist() for c, v in d.items()}
                      for s, d in rec.sq_errors.items()},
    }
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rispos",
        description="RIS-aided MIMO-OFDM positioning simulations")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults baked in)")
    common.add_argument("--seed", type=int, help="override master seed")

    p = sub.add_parser("simulate", parents=[common],
                       help="full sweep: summary CSV plus per-figure files")
    p.add_argument("--out", help="output directory")
    p.add_argument("--trials", type=int)
    p.add_argument("--powers", nargs="+")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", parents=[common],
                       help="Monte Carlo sweep, aggregate CSV only")
    p.add_argument("--out", help="output directory")
    p.add_argument("--trials", type=int)
    p.add_argument("--powers", nargs="+")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("bounds", parents=[common],
                       help="print bound curves for the configured sweep")
    p.add_argument("--powers", nargs="+")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("trial", parents=[common],
                       help="run one trial and dump the record as JSON")
    p.add_argument("--power", type=float, required=True)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=_cmd_trial)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RisposError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
