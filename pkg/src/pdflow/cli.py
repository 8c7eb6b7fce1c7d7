"""Command-line interface.

Subcommands: run, oracle, compare, check, list-problems.
Exit codes: 0 ok, 1 config error, 2 divergence, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .library import get_scenario, list_problems
from .oracle import solve_at_times
from .problem import InfeasibleProblemError


def _vector(text):
    return np.array([float(v) for v in text.split(",")])


def _add_common_flags(sub):
    sub.add_argument("--problem", required=True, help="built-in name or scenario file")
    sub.add_argument("--flow", choices=["asymptotic", "fixed", "finite"], default="asymptotic")
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--c1", type=float)
    sub.add_argument("--c2", type=float)
    sub.add_argument("--gamma1", type=float)
    sub.add_argument("--gamma2", type=float)
    sub.add_argument("--step", type=float)
    sub.add_argument("--horizon", type=float)
    sub.add_argument("--sampling", type=float, default=0.1)
    sub.add_argument("--x0", type=_vector)
    sub.add_argument("--lambda0", type=_vector)
    sub.add_argument("--slack", choices=["asymptotic", "fixed"])
    sub.add_argument("--delta", type=float)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--k", type=float)
    sub.add_argument("--out", type=Path)
    sub.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdflow",
        description="Track optimizer trajectories of time-varying convex programs "
        "with projected primal-dual flows.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="integrate a flow and compare against the oracle")
    _add_common_flags(run)

    orc = subs.add_parser("oracle", help="solve the sampled problem over the horizon")
    _add_common_flags(orc)

    cmp_ = subs.add_parser("compare", help="wall-clock of batch vs. flows")
    cmp_.add_argument("--problem", required=True)
    cmp_.add_argument("--sampling", type=float, default=0.1)

    chk = subs.add_parser("check", help="run the randomized invariant suites")
    chk.add_argument("--problem", required=True)
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--count", type=int, default=200)

    subs.add_parser("list-problems", help="list built-in scenarios")
    return parser


FLOW_KIND = {"asymptotic": "asymptotic", "fixed": "fixed_time", "finite": "finite_time"}


def _overrides(args) -> dict:
    keys = ("alpha", "c1", "c2", "gamma1", "gamma2", "step", "horizon", "slack", "delta", "rho", "k")
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if args.x0 is not None:
        out["x0"] = args.x0
    if args.lambda0 is not None:
        out["lambda0"] = args.lambda0
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "list-problems":
            for name, desc in list_problems():
                print(f"{name:<10s} {desc}")
            return 0

        if args.command == "check":
            report = diagnostics.run_checks(args.problem, seed=args.seed, count=args.count)
            print(f"invariant checks for {args.problem}:")
            print(report.summary())
            return 0 if report.passed else 3

        if args.command == "compare":
            report = diagnostics.compare_runtimes(args.problem, sampling=args.sampling)
            print(report.summary())
            return 0

        if args.command == "oracle":
            scen = diagnostics._resolve_scenario(args.problem)
            horizon = args.horizon if args.horizon is not None else scen.config.horizon
            times = np.arange(0.0, horizon + 0.5 * args.sampling, args.sampling)
            orc = solve_at_times(scen.problem, [float(t) for t in times])
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                traj = diagnostics.oracle_to_trajectory(
                    scen.problem, orc, scen.flow_params, scen.config
                )
                diagnostics.write_trajectory_csv(traj, args.out / "oracle.csv")
                print(f"wrote {args.out / 'oracle.csv'}")
            print(f"oracle: {len(orc.solutions)} solutions, {len(orc.failures)} failures")
            for t, msg in orc.failures[:10]:
                print(f"  t={t}: {msg}")
            return 0 if not orc.failures else 3

        # run
        report = diagnostics.run_tracking(
            args.problem,
            flow_kind=FLOW_KIND[args.flow],
            overrides=_overrides(args),
            out_dir=str(args.out) if args.out else None,
            sampling=args.sampling,
        )
        kind = FLOW_KIND[args.flow]
        print(f"run {args.problem} [{kind}]: {len(report.trajectory.samples)} samples")
        for cutoff, err in sorted(report.max_error_after.items()):
            print(f"  max |x - x*| after {cutoff:g} s: {err:.4g}")
        print(f"  decay violations: {report.decay_violations}")
        print(f"  wallclock: flow {report.wallclock['flow']:.2f} s, "
              f"oracle {report.wallclock['oracle']:.2f} s")
        if report.diverged:
            print("  flow DIVERGED; partial results written")
            return 2
        return 0
    except (KeyError, ValueError, FileNotFoundError, InfeasibleProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
