"""Command-line entry point: ``ocsc run``, ``ocsc lq reference``, ``ocsc audit``."""

import argparse
import json
import os
import sys

from .experiments import EXPERIMENTS, run_experiment
from .lq import write_reference
from .problem import load_config, run_audits


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="ocsc", description="Discrete state-constraint experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and emit JSON/CSV records")
    run.add_argument("experiment", choices=EXPERIMENTS + ("all",))
    run.add_argument("--n", type=_ints, default=None, help="comma-separated n values")
    run.add_argument("--delta", type=_floats, default=None, help="comma-separated surgery deltas")
    run.add_argument("--seeds", type=int, default=16, help="violators per delta")
    run.add_argument("--steps", type=int, default=None, help="integration steps on [0, T]")
    run.add_argument("--out", default=None, help="directory for <experiment>.json and .csv")
    run.add_argument("--tol", type=float, default=None, help="override the gate tolerance")

    lq = sub.add_parser("lq", help="closed-form LQ benchmark")
    lq_sub = lq.add_subparsers(dest="lq_command", required=True)
    ref = lq_sub.add_parser("reference", help="dump closed-form pairs and switching times")
    ref.add_argument("--out", required=True)
    ref.add_argument("--resolution", type=int, default=1001)

    audit = sub.add_parser("audit", help="sample the standing assumptions for a config problem")
    audit.add_argument("--config", required=True, help="JSON or YAML file with the affine-family keys")
    audit.add_argument("--samples", type=int, default=10_000)
    return parser


def _seed():
    return int(os.environ.get("OCSC_SEED", "0"))


def _summary(rec):
    lines = [f"{rec.experiment}: {'PASS' if rec.passed else 'FAIL'} ({rec.wall_time:.2f}s)"]
    for g in rec.gates:
        lines.append(f"  [{'pass' if g.passed else 'FAIL'}] {g.name} = {g.value:.6g} ({g.bound})")
    return "\n".join(lines)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "lq":
        for path in write_reference(args.out, args.resolution):
            print(path)
        return 0
    if args.command == "audit":
        report = run_audits(load_config(args.config), samples=args.samples, seed=_seed())
        print(json.dumps(report, indent=2))
        return 0 if report["control_monotonicity"]["satisfied"] and report["boundary_controllability"]["satisfied"] else 1
    names = EXPERIMENTS if args.experiment == "all" else (args.experiment,)
    ok = True
    for name in names:
        rec = run_experiment(
            name, n_values=args.n, deltas=args.delta, seeds=args.seeds, steps=args.steps, tol=args.tol, seed=_seed()
        )
        if args.out:
            rec.write(args.out)
        print(_summary(rec), flush=True)
        ok &= rec.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
