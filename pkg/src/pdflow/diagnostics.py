"""Run, verify and compare the flows against the sampled oracle.

This is the working layer behind the command-line interface: it
integrates a flow, solves the oracle on the same time grid, computes
tracking errors and Lyapunov diagnostics, writes the CSV artifacts, and
hosts the randomized invariant suites used by ``check``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .flows import FlowParams, decay_residual, flow_eval, settling_time_bound
from .integrate import IntegratorConfig, Trajectory, TrajectorySample, integrate
from .lagrangian import EvalBundle, assemble_bundle, lyapunov_value
from .library import Scenario, get_scenario, parse_scenario, rendezvous_problem
from .oracle import OracleTrajectory, solve_at_time, solve_at_times, verify_kkt
from .problem import DivergenceError, PrimalDualState, TimeVaryingProblem, check_derivatives
from .saddle import SlackSchedule, saddle_inverse, saddle_jacobian, schur_complement

__all__ = [
    "RunReport",
    "CheckReport",
    "ComparisonReport",
    "run_tracking",
    "run_checks",
    "compare_runtimes",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "default_initial_state",
    "sample_states_near_optima",
    "random_bundle",
]

log = logging.getLogger(__name__)

DECAY_TOL = 1e-8  # residual <= DECAY_TOL * (1 + V) counts as honoring the certificate


# -- CSV serialization ------------------------------------------------------------


def _pattern_str(pattern) -> str:
    return "".join("1" if b else "0" for b in pattern)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write samples with header t, x_*, lam_*, V, decay_residual, active_pattern, source.

    Floats are rendered with repr (shortest round-trip decimal), so
    parsing the file back reproduces every value bit-for-bit.
    """
    n = traj.samples[0].state.x.size if traj.samples else 0
    m = traj.samples[0].state.lam.size if traj.samples else 0
    cols = (
        ["t"]
        + [f"x_{i}" for i in range(n)]
        + [f"lam_{i}" for i in range(m)]
        + ["V", "decay_residual", "active_pattern", "source"]
    )
    lines = [",".join(cols)]
    for s in traj.samples:
        row = (
            [repr(s.state.t)]
            + [repr(v) for v in s.state.x]
            + [repr(v) for v in s.state.lam]
            + [repr(s.V), repr(s.decay_residual), _pattern_str(s.active_pattern), traj.source]
        )
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class TrajectoryTable:
    """Parsed CSV content (plain arrays, no problem attached)."""

    t: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    V: np.ndarray
    decay_residual: np.ndarray
    active_pattern: List[str]
    source: List[str]


def read_trajectory_csv(path) -> TrajectoryTable:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    n = sum(1 for h in header if h.startswith("x_"))
    m = sum(1 for h in header if h.startswith("lam_"))
    t, xs, lams, V, resid, patt, src = [], [], [], [], [], [], []
    for line in lines[1:]:
        parts = line.split(",")
        t.append(float(parts[0]))
        xs.append([float(v) for v in parts[1 : 1 + n]])
        lams.append([float(v) for v in parts[1 + n : 1 + n + m]])
        V.append(float(parts[1 + n + m]))
        resid.append(float(parts[2 + n + m]))
        patt.append(parts[3 + n + m])
        src.append(parts[4 + n + m])
    return TrajectoryTable(
        t=np.array(t),
        x=np.array(xs),
        lam=np.array(lams).reshape(len(t), m),
        V=np.array(V),
        decay_residual=np.array(resid),
        active_pattern=patt,
        source=src,
    )


def oracle_to_trajectory(
    p: TimeVaryingProblem, orc: OracleTrajectory, params: FlowParams, cfg: IntegratorConfig
) -> Trajectory:
    """Wrap oracle solutions in the trajectory container (source='oracle')."""
    samples = []
    for sol in orc.solutions:
        st = PrimalDualState(x=sol.x_star, lam=np.maximum(sol.lambda_star, 0.0), t=sol.t)
        b = assemble_bundle(p, st)
        pattern = np.zeros(p.m, dtype=bool)
        for i in sol.active_set:
            pattern[i] = True
        samples.append(
            TrajectorySample(state=st, V=lyapunov_value(b), decay_residual=0.0, active_pattern=pattern)
        )
    return Trajectory(
        samples=samples,
        params=params,
        config=cfg,
        sched=SlackSchedule(kind="none"),
        problem_name=p.name,
        source="oracle",
    )


# -- run ---------------------------------------------------------------------------


@dataclass
class RunReport:
    trajectory: Trajectory
    oracle: OracleTrajectory
    tracking_error_series: List[Tuple[float, float, float]]  # (t, |x err|, |lam err|)
    max_error_after: Dict[float, float]
    wallclock: Dict[str, float]
    decay_violations: int
    diverged: bool = False

    def max_x_error(self, after: float = 0.0) -> float:
        errs = [e for t, e, _ in self.tracking_error_series if t >= after]
        return max(errs) if errs else float("nan")


def default_initial_state(p: TimeVaryingProblem, t0: float = 0.0, offset: float = 0.5) -> PrimalDualState:
    """Deterministic start on the primal optimizer with offset multipliers.

    Keeping the primal part on the optimizer makes the initial active
    pattern faithful to the problem geometry; the +offset on every
    multiplier still leaves a genuine transient (grad_x L != 0) for the
    flow to contract, and keeps the start inside the step-stable region
    of the fixed-time gains.
    """
    sol = solve_at_time(p, t0)
    return PrimalDualState(x=sol.x_star, lam=sol.lambda_star + offset, t=t0)


def _resolve_scenario(problem: str) -> Scenario:
    path = Path(problem)
    if path.suffix == ".scn" or path.exists():
        spec = parse_scenario(path.read_text())
        from .library import disks5_scenario

        base = disks5_scenario()  # generic rendezvous defaults
        return dataclasses.replace(
            base,
            problem=rendezvous_problem(spec, name=path.stem),
            config=dataclasses.replace(base.config, horizon=spec.horizon),
            description=spec.description or f"scenario file {path.name}",
        )
    return get_scenario(problem)


def run_tracking(
    problem: str,
    flow_kind: str = "asymptotic",
    *,
    overrides: Optional[dict] = None,
    out_dir: Optional[str] = None,
    sampling: float = 0.1,
) -> RunReport:
    """Integrate one flow, solve the oracle on the recorded grid, and report.

    ``overrides`` may remap alpha, c1, c2, gamma1, gamma2, step, horizon,
    slack, delta, rho, k, x0, lambda0.  When ``out_dir`` is given, writes
    trajectory.csv (flow), oracle.csv, report.csv (error series) and
    summary.json.
    """
    overrides = dict(overrides or {})
    scen = _resolve_scenario(problem)
    p = scen.problem

    params = scen.params_for(flow_kind)
    for key in ("alpha", "c1", "c2", "gamma1", "gamma2"):
        if overrides.get(key) is not None:
            params = dataclasses.replace(params, **{key: float(overrides[key])})

    sched = scen.slack_for(flow_kind)
    if overrides.get("slack") is not None:
        kind = {"fixed": "fixed_time"}.get(overrides["slack"], overrides["slack"])
        t_max = settling_time_bound(params) if params.kind == "fixed_time" else scen.slack.t_max
        sched = SlackSchedule(kind=kind, t_max=t_max)
    for key in ("delta", "rho", "k"):
        if overrides.get(key) is not None:
            sched = dataclasses.replace(sched, **{key: float(overrides[key])})

    step = float(overrides.get("step") or scen.config.step)
    horizon = float(overrides["horizon"]) if overrides.get("horizon") is not None else scen.config.horizon
    record_every = max(1, int(round(sampling / step)))
    if abs(record_every * step - sampling) > 1e-12:
        log.warning(
            "sampling %.g is not a multiple of step %.g; recording every %d steps (%.6g s)",
            sampling, step, record_every, record_every * step,
        )
    cfg = IntegratorConfig(step=step, horizon=horizon, record_every=record_every,
                           eps_lambda=params.eps_lambda)

    if overrides.get("x0") is not None:
        x0 = np.atleast_1d(np.asarray(overrides["x0"], float))
        lam0 = np.atleast_1d(np.asarray(overrides.get("lambda0", np.zeros(p.m)), float))
        s0 = PrimalDualState(x=x0, lam=lam0, t=0.0)
    elif scen.x0 is not None:
        lam0 = scen.lam0 if scen.lam0 is not None else np.zeros(p.m)
        if overrides.get("lambda0") is not None:
            lam0 = np.atleast_1d(np.asarray(overrides["lambda0"], float))
        s0 = PrimalDualState(x=scen.x0, lam=lam0, t=0.0)
    else:
        s0 = default_initial_state(p)

    diverged = False
    t_start = time.perf_counter()
    try:
        traj = integrate(p, s0, params, sched, cfg, problem_name=p.name)
    except DivergenceError as exc:
        diverged = True
        log.error("flow diverged: %s", exc)
        traj = Trajectory(
            samples=list(getattr(exc, "partial", []) or []),
            params=params,
            config=cfg,
            sched=sched,
            problem_name=p.name,
        )
    flow_seconds = time.perf_counter() - t_start

    times = [s.state.t for s in traj.samples]
    t_start = time.perf_counter()
    orc = solve_at_times(p, times)
    oracle_seconds = time.perf_counter() - t_start

    by_time = {sol.t: sol for sol in orc.solutions}
    series = []
    for s in traj.samples:
        sol = by_time.get(s.state.t)
        if sol is None:
            continue
        series.append(
            (
                s.state.t,
                float(np.linalg.norm(s.state.x - sol.x_star)),
                float(np.linalg.norm(s.state.lam - sol.lambda_star)),
            )
        )

    cutoffs = [1.0, 3.0, 5.0]
    if params.kind == "fixed_time":
        cutoffs.append(settling_time_bound(params))
    max_after = {}
    for c in cutoffs:
        errs = [e for t, e, _ in series if t >= c]
        if errs:
            max_after[c] = max(errs)

    violations = sum(
        1 for s in traj.samples if s.decay_residual > DECAY_TOL * (1.0 + s.V)
    )

    report = RunReport(
        trajectory=traj,
        oracle=orc,
        tracking_error_series=series,
        max_error_after=max_after,
        wallclock={"flow": flow_seconds, "oracle": oracle_seconds},
        decay_violations=violations,
        diverged=diverged,
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if traj.samples:
            write_trajectory_csv(traj, out / "trajectory.csv")
        write_trajectory_csv(oracle_to_trajectory(p, orc, params, cfg), out / "oracle.csv")
        lines = ["t,x_error,lam_error"]
        lines += [f"{repr(t)},{repr(ex)},{repr(el)}" for t, ex, el in series]
        (out / "report.csv").write_text("\n".join(lines) + "\n")
        (out / "summary.json").write_text(
            json.dumps(
                {
                    "problem": p.name,
                    "flow": flow_kind,
                    "max_error_after": {str(k): v for k, v in max_after.items()},
                    "decay_violations": violations,
                    "wallclock": report.wallclock,
                    "diverged": diverged,
                    "oracle_failures": orc.failures,
                },
                indent=2,
            )
            + "\n"
        )
    return report


# -- randomized invariants (check) --------------------------------------------------


def random_bundle(rng: np.random.Generator, n: int, m: int, cond_cap: float = 1e6) -> EvalBundle:
    """Synthetic well-conditioned bundle for saddle-algebra identities."""
    for _ in range(100):
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        eigs = rng.uniform(0.5, 5.0, size=n)
        H = (Q * eigs) @ Q.T
        H = 0.5 * (H + H.T)
        G = rng.normal(size=(n, m))
        lam = np.where(rng.random(m) < 0.3, 0.0, rng.uniform(0.1, 3.0, size=m))
        g = -rng.uniform(0.1, 3.0, size=m)
        b = EvalBundle(
            x=rng.normal(size=n),
            lam=lam,
            t=float(rng.uniform(0, 10)),
            g_vals=g,
            grad_x_L=rng.normal(size=n),
            hess_xx_L=H,
            grad_x_G=G,
            grad_t_G=rng.normal(size=m),
            grad_xt_G=rng.normal(size=(n, m)),
            grad_xt_f=rng.normal(size=n),
        )
        J = saddle_jacobian(b).matrix
        if np.linalg.cond(J) <= cond_cap:
            return b
    raise RuntimeError("could not draw a well-conditioned instance")


def sample_states_near_optima(
    p: TimeVaryingProblem,
    horizon: float,
    rng: np.random.Generator,
    count: int,
    box_radius: float = 5.0,
    lam_high: float = 5.0,
    anchor_times: int = 8,
) -> List[PrimalDualState]:
    """Random states with lam in [0, lam_high]^m and x in a box around optima.

    Oracle solutions at a few anchor times supply the box centers.
    """
    times = np.sort(rng.uniform(0.0, horizon, size=anchor_times))
    anchors = []
    for t in times:
        try:
            anchors.append(solve_at_time(p, float(t)))
        except Exception as exc:
            log.warning("anchor oracle failed at t=%s: %s", t, exc)
    if not anchors:
        raise RuntimeError("no oracle anchors available for sampling")
    states = []
    for _ in range(count):
        sol = anchors[rng.integers(len(anchors))]
        x = sol.x_star + rng.uniform(-box_radius, box_radius, size=p.n)
        lam = rng.uniform(0.0, lam_high, size=p.m)
        states.append(PrimalDualState(x=x, lam=lam, t=sol.t))
    return states


@dataclass
class CheckReport:
    suites: Dict[str, Tuple[str, str]] = field(default_factory=dict)  # name -> (status, detail)

    def record(self, name: str, status: str, detail: str = "") -> None:
        self.suites[name] = (status, detail)

    @property
    def passed(self) -> bool:
        return all(status != "fail" for status, _ in self.suites.values())

    def summary(self) -> str:
        lines = []
        for name, (status, detail) in self.suites.items():
            lines.append(f"  {name:<18s} {status.upper():<7s} {detail}")
        return "\n".join(lines)


def run_checks(
    problem: str,
    seed: int = 0,
    count: int = 200,
    _corrupt_slot: Optional[str] = None,
) -> CheckReport:
    """Randomized invariant suites for one problem.

    Suites: gradient finite differences, Lyapunov decay residuals for
    both flows, saddle block-inverse identity, oracle KKT residuals, and
    dual feasibility along a short integration.  The Schur and projection
    suites are skipped for unconstrained problems.  ``_corrupt_slot`` is
    a test hook that offsets one derivative slot by +1.
    """
    rng = np.random.default_rng(seed)
    scen = _resolve_scenario(problem)
    p = scen.problem
    if _corrupt_slot is not None:
        original = getattr(p, _corrupt_slot)
        p = dataclasses.replace(
            p, **{_corrupt_slot: lambda x, t, _f=original: np.asarray(_f(x, t)) + 1.0}
        )
    report = CheckReport()
    horizon = scen.config.horizon

    # gradient finite differences
    samples = [
        (rng.uniform(-5, 5, size=p.n), rng.uniform(0, horizon)) for _ in range(min(count, 100))
    ]
    fd = check_derivatives(p, samples)
    report.record(
        "gradient_fd",
        "pass" if fd.passed else "fail",
        f"worst {max(fd.max_rel_error.values()):.2e}" if fd.max_rel_error else "",
    )

    # Lyapunov decay residuals, both flow kinds
    try:
        states = sample_states_near_optima(p, horizon, rng, count)
        worst = 0.0
        for kind in ("asymptotic", "fixed_time"):
            params = scen.params_for(kind)
            sched = scen.slack_for(kind)
            for s in states:
                ev = flow_eval(p, s, params, sched)
                resid = decay_residual(ev, params)
                margin = resid - DECAY_TOL * (1.0 + ev.V)
                worst = max(worst, margin)
        report.record("lyapunov_decay", "pass" if worst <= 0 else "fail", f"margin {worst:.2e}")
    except Exception as exc:
        report.record("lyapunov_decay", "fail", f"error: {exc}")

    # block-inverse identity on synthetic instances
    if p.m == 0:
        report.record("schur_identity", "skipped", "no constraints")
    else:
        worst = 0.0
        for _ in range(50):
            b = random_bundle(rng, min(p.n, 6), min(p.m, 4))
            M = schur_complement(b)
            Jinv = saddle_inverse(b, M)
            J = saddle_jacobian(b).matrix
            worst = max(worst, float(np.linalg.norm(J @ Jinv - np.eye(J.shape[0]))))
        report.record("schur_identity", "pass" if worst <= 1e-8 else "fail", f"worst {worst:.2e}")

    # oracle KKT residuals
    times = np.linspace(0.0, horizon, 21)
    failures = []
    for t in times:
        try:
            sol = solve_at_time(p, float(t))
            res = verify_kkt(p, sol)
            if not res.within():
                failures.append((float(t), res))
        except Exception as exc:
            failures.append((float(t), str(exc)))
    report.record(
        "oracle_kkt", "pass" if not failures else "fail", f"{len(failures)} failures" if failures else ""
    )

    # dual feasibility along a short integration
    if p.m == 0:
        report.record("dual_feasibility", "skipped", "no multipliers to project")
    else:
        try:
            s0 = (
                PrimalDualState(x=scen.x0, lam=scen.lam0, t=0.0)
                if scen.x0 is not None and scen.lam0 is not None
                else default_initial_state(p)
            )
            cfg = dataclasses.replace(scen.config, horizon=min(horizon, 2.0))
            traj = integrate(p, s0, scen.params_for("asymptotic"), scen.slack_for("asymptotic"), cfg)
            min_lam = traj.min_lambda()
            report.record(
                "dual_feasibility", "pass" if min_lam >= 0.0 else "fail", f"min lambda {min_lam:.2e}"
            )
        except Exception as exc:
            report.record("dual_feasibility", "fail", f"error: {exc}")
    return report


# -- runtime comparison ---------------------------------------------------------------


@dataclass
class ComparisonReport:
    problem: str
    sampling: float
    wallclock: Dict[str, float]
    batch_slower_than_flows: bool
    too_short: bool = False

    def summary(self) -> str:
        lines = [f"runtime comparison on {self.problem} (sampling {self.sampling} s):"]
        for k, v in self.wallclock.items():
            lines.append(f"  {k:<12s} {v:8.3f} s")
        if self.too_short:
            lines.append("  horizon too short to order")
        else:
            lines.append(
                "  batch slower than both flows: " + ("yes" if self.batch_slower_than_flows else "NO")
            )
        return "\n".join(lines)


def compare_runtimes(problem: str, sampling: float = 0.1) -> ComparisonReport:
    """Wall-clock of the sampled batch vs. both flows over the full horizon.

    The batch column times independent per-sample solves (no warm start),
    which is what a batch process does; the flows integrate with the
    scenario's recommended step from the shared default initial state.
    Timings run sequentially on one thread.
    """
    scen = _resolve_scenario(problem)
    p = scen.problem
    horizon = scen.config.horizon
    times = np.arange(0.0, horizon + 0.5 * sampling, sampling)
    too_short = len(times) < 2

    if scen.x0 is not None and scen.lam0 is not None:
        s0 = PrimalDualState(x=scen.x0, lam=scen.lam0, t=0.0)
    else:
        s0 = default_initial_state(p)

    wall: Dict[str, float] = {}

    t0 = time.perf_counter()
    for t in times:
        solve_at_time(p, float(t))
    wall["batch"] = time.perf_counter() - t0

    for kind, label in (("asymptotic", "asymptotic"), ("fixed_time", "fixed_time")):
        params = scen.params_for(kind)
        sched = scen.slack_for(kind)
        t0 = time.perf_counter()
        integrate(p, s0, params, sched, scen.config)
        wall[label] = time.perf_counter() - t0

    slower = (not too_short) and all(wall["batch"] > wall[k] for k in ("asymptotic", "fixed_time"))
    return ComparisonReport(
        problem=p.name,
        sampling=sampling,
        wallclock=wall,
        batch_slower_than_flows=slower,
        too_short=too_short,
    )
