"""Sampled-time ground truth by active-set enumeration.

Each sampled instant freezes the problem and solves it exactly: every
subset A of the constraint indices is tried, the equality-constrained
stationarity system

    grad f(x, t) + sum_{i in A} lam_i grad g_i(x, t) = 0,   g_A(x, t) = 0

is solved by damped Newton, and the feasible candidates with lam_A >= 0
keep their objective; the best one wins.  The code here deliberately
shares nothing with the flow construction so it can serve as an
independent referee for the dynamics.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .problem import InfeasibleProblemError, TimeVaryingProblem

__all__ = [
    "OracleSolution",
    "OracleTrajectory",
    "KKTResiduals",
    "verify_kkt",
    "solve_at_time",
    "solve_at_times",
    "grid_search_minimizer",
]

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100
MAX_BACKTRACKS = 40
FEAS_TOL = 1e-8
TIE_TOL = 1e-10


@dataclass(frozen=True)
class OracleSolution:
    """KKT point of the problem frozen at time t."""

    t: float
    x_star: np.ndarray
    lambda_star: np.ndarray
    active_set: Tuple[int, ...]
    kkt_residual: float
    objective: float
    strict_complementarity_ok: bool = True
    tie_flag: bool = False
    skipped_subsets: Tuple[Tuple[int, ...], ...] = ()


@dataclass
class OracleTrajectory:
    """Per-time oracle solutions plus any non-fatal per-sample failures."""

    solutions: List[OracleSolution]
    failures: List[Tuple[float, str]] = field(default_factory=list)

    def __iter__(self):
        return iter(self.solutions)

    def __len__(self):
        return len(self.solutions)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.solutions])

    def xs(self) -> np.ndarray:
        return np.array([s.x_star for s in self.solutions])

    def lams(self) -> np.ndarray:
        return np.array([s.lambda_star for s in self.solutions])


@dataclass(frozen=True)
class KKTResiduals:
    stationarity: float
    complementarity: float
    primal: float
    dual: float  # min multiplier (negative = violated)

    def within(self, tol: float = FEAS_TOL, dual_tol: float = 1e-10) -> bool:
        return (
            self.stationarity <= tol
            and self.complementarity <= tol
            and self.primal <= tol
            and self.dual >= -dual_tol
        )


def verify_kkt(p: TimeVaryingProblem, sol: OracleSolution) -> KKTResiduals:
    """The four optimality residuals of a candidate primal-dual pair."""
    x, lam, t = sol.x_star, sol.lambda_star, sol.t
    grad = np.asarray(p.grad_x_f(x, t), float)
    if p.m:
        gvals = np.asarray(p.g(x, t), float)
        grad = grad + np.asarray(p.grad_x_g(x, t), float) @ lam
        comp = float(np.max(np.abs(lam * gvals)))
        primal = float(np.max(np.maximum(gvals, 0.0)))
        dual = float(lam.min())
    else:
        comp, primal, dual = 0.0, 0.0, 0.0
    return KKTResiduals(
        stationarity=float(np.linalg.norm(grad)),
        complementarity=comp,
        primal=primal,
        dual=dual,
    )


def _kkt_residual_vec(p, t, subset, x, lam_a):
    grad = np.asarray(p.grad_x_f(x, t), float)
    if subset:
        G = np.asarray(p.grad_x_g(x, t), float)[:, subset]
        grad = grad + G @ lam_a
        gvals = np.asarray(p.g(x, t), float)[list(subset)]
        return np.concatenate([grad, gvals])
    return grad


def _kkt_jacobian(p, t, subset, x, lam_a):
    H = np.asarray(p.hess_xx_f(x, t), float)
    k = len(subset)
    if k:
        hg = np.asarray(p.hess_xx_g(x, t), float).reshape(p.m, p.n, p.n)[list(subset)]
        H = H + np.tensordot(lam_a, hg, axes=1)
        G = np.asarray(p.grad_x_g(x, t), float)[:, subset]
        J = np.zeros((p.n + k, p.n + k))
        J[: p.n, : p.n] = H
        J[: p.n, p.n :] = G
        J[p.n :, : p.n] = G.T
        return J
    return H


def _damped_newton(p, t, subset, x0, lam0):
    """Newton with halving backtracking on the residual norm.

    Returns (x, lam_A, residual_norm, converged, singular).
    """
    x = np.array(x0, float)
    lam_a = np.array(lam0, float)
    r = _kkt_residual_vec(p, t, subset, x, lam_a)
    rn = float(np.linalg.norm(r))
    for _ in range(NEWTON_MAX_ITER):
        if rn <= NEWTON_TOL:
            return x, lam_a, rn, True, False
        J = _kkt_jacobian(p, t, subset, x, lam_a)
        try:
            d = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return x, lam_a, rn, False, True
        if not np.all(np.isfinite(d)):
            return x, lam_a, rn, False, True
        step = 1.0
        improved = False
        for _ in range(MAX_BACKTRACKS):
            x_new = x + step * d[: p.n]
            lam_new = lam_a + step * d[p.n :]
            r_new = _kkt_residual_vec(p, t, subset, x_new, lam_new)
            rn_new = float(np.linalg.norm(r_new))
            if rn_new < rn or rn_new <= NEWTON_TOL:
                improved = True
                break
            step *= 0.5
        if not improved:
            return x, lam_a, rn, False, False
        x, lam_a, r, rn = x_new, lam_new, r_new, rn_new
    return x, lam_a, rn, rn <= NEWTON_TOL, False


def _unconstrained_start(p, t, x_init=None):
    """Newton for grad f = 0; least-norm step when the Hessian is singular."""
    x = np.zeros(p.n) if x_init is None else np.array(x_init, float)
    singular = False
    for _ in range(NEWTON_MAX_ITER):
        grad = np.asarray(p.grad_x_f(x, t), float)
        if np.linalg.norm(grad) <= NEWTON_TOL:
            break
        H = np.asarray(p.hess_xx_f(x, t), float)
        try:
            d = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            singular = True
            d = np.linalg.lstsq(H, -grad, rcond=None)[0]
        if not np.all(np.isfinite(d)):
            break
        x_new = x + d
        if np.linalg.norm(np.asarray(p.grad_x_f(x_new, t), float)) >= np.linalg.norm(grad):
            step = 0.5
            while step > 1e-8 and np.linalg.norm(
                np.asarray(p.grad_x_f(x + step * d, t), float)
            ) >= np.linalg.norm(grad):
                step *= 0.5
            x_new = x + step * d
        x = x_new
    return x, singular


def solve_at_time(
    p: TimeVaryingProblem,
    t: float,
    x_warm: Optional[np.ndarray] = None,
    lam_warm: Optional[np.ndarray] = None,
) -> OracleSolution:
    """Solve the problem frozen at time t by active-set enumeration.

    Every subset of constraints is solved by damped Newton started from
    the unconstrained minimizer (or the warm pair when given); candidates
    must converge, be primal feasible and have nonnegative subset
    multipliers.  The smallest objective wins.  Strict complementarity
    of the winner is verified and flagged, as are objective ties between
    distinct active sets (degenerate geometry).
    """
    if p.m > 20:
        raise ValueError(f"active-set enumeration supports m <= 20, got {p.m}")
    if x_warm is not None:
        x_start = np.array(x_warm, float)
    else:
        x_start, _ = _unconstrained_start(p, t)

    candidates = []
    skipped = []
    # Perturbed restarts: the plain start can sit exactly where a constraint
    # gradient vanishes (e.g. at a disk center), which makes the KKT Jacobian
    # singular for reasons the subset itself is not to blame for.
    alt = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(p.n)])
    ramp = np.linspace(0.5, 1.5, p.n)
    starts = (x_start, x_start + 0.1 * alt, x_start + 0.35 * ramp)

    # Subsets larger than n cannot satisfy the active-gradient independence
    # the KKT system needs, so enumeration stops at size min(m, n).
    for subset in itertools.chain.from_iterable(
        itertools.combinations(range(p.m), k) for k in range(min(p.m, p.n) + 1)
    ):
        # warm multipliers steer Newton toward the root that continues the
        # previous active-set geometry (fixed subsets can have spurious
        # second roots with negative multipliers)
        if lam_warm is not None:
            lam0 = np.array([max(lam_warm[i], 0.5) for i in subset])
        else:
            lam0 = np.ones(len(subset))
        converged = False
        singular = True
        for start in starts:
            x, lam_a, rn, converged, singular = _damped_newton(p, t, subset, start, lam0)
            if converged or not singular:
                break
        if singular:
            skipped.append(subset)
            continue
        if not converged:
            continue
        if lam_a.size and lam_a.min() < -1e-10:
            continue
        gvals = np.asarray(p.g(x, t), float) if p.m else np.zeros(0)
        if gvals.size and gvals.max() > FEAS_TOL:
            continue
        candidates.append((float(p.f(x, t)), subset, x, lam_a, rn))

    if not candidates:
        if x_warm is not None:
            # warm basins can all miss after a fast geometry change; retry cold
            log.debug("warm enumeration found no candidate at t=%s; retrying cold", t)
            return solve_at_time(p, t)
        raise InfeasibleProblemError(
            f"no feasible KKT candidate at t={t} "
            f"({len(skipped)} singular subsets skipped)"
        )

    candidates.sort(key=lambda c: c[0])
    obj, subset, x, lam_a, rn = candidates[0]

    # ties between geometrically distinct candidates signal degeneracy
    tie = any(
        abs(c[0] - obj) <= TIE_TOL and np.linalg.norm(c[2] - x) > 1e-6 for c in candidates[1:]
    )
    sol = _finalize(p, t, subset, x, lam_a, skipped=skipped, tie=tie)
    if not sol.strict_complementarity_ok:
        log.debug("strict complementarity violated at t=%s (active=%s)", t, sol.active_set)
    if tie:
        log.debug("objective tie between distinct active sets at t=%s", t)
    return sol


def _finalize(p, t, subset, x, lam_a, skipped=(), tie=False) -> OracleSolution:
    lam = np.zeros(p.m)
    for idx, i in enumerate(subset):
        lam[i] = max(lam_a[idx], 0.0)
    gvals = np.asarray(p.g(x, t), float) if p.m else np.zeros(0)
    active = tuple(int(i) for i in np.flatnonzero(np.abs(gvals) <= FEAS_TOL))
    strict_ok = all(lam[i] > 1e-10 for i in active)
    grad = np.asarray(p.grad_x_f(x, t), float)
    if p.m:
        grad = grad + np.asarray(p.grad_x_g(x, t), float) @ lam
    return OracleSolution(
        t=float(t),
        x_star=x,
        lambda_star=lam,
        active_set=active,
        kkt_residual=float(np.linalg.norm(grad)),
        objective=float(p.f(x, t)),
        strict_complementarity_ok=strict_ok,
        tie_flag=tie,
        skipped_subsets=tuple(skipped),
    )


def _try_subset(p, t, subset, x0, lam0) -> Optional[OracleSolution]:
    """One subset Newton plus full KKT validation; None when it does not certify."""
    x, lam_a, rn, converged, singular = _damped_newton(p, t, subset, x0, lam0)
    if singular or not converged:
        return None
    if lam_a.size and lam_a.min() < -1e-10:
        return None
    gvals = np.asarray(p.g(x, t), float) if p.m else np.zeros(0)
    if gvals.size and gvals.max() > FEAS_TOL:
        return None
    return _finalize(p, t, subset, x, lam_a)


def solve_at_times(p: TimeVaryingProblem, times: Sequence[float]) -> OracleTrajectory:
    """Sequential sampled solve; each Newton warm-starts from the previous x.

    Convexity with Slater's condition makes any fully validated KKT point
    the global optimum, so between active-set changes only the previous
    active set is re-solved; the first sample and every sample where the
    warm subset stops certifying fall back to full enumeration.  Per-sample
    failures are collected, not fatal.  ``times`` must be sorted ascending.
    """
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted ascending")
    solutions: List[OracleSolution] = []
    failures: List[Tuple[float, str]] = []
    prev: Optional[OracleSolution] = None
    for t in times:
        try:
            sol = None
            if prev is not None:
                lam0 = np.array([max(prev.lambda_star[i], 0.5) for i in prev.active_set])
                sol = _try_subset(p, t, prev.active_set, prev.x_star, lam0)
            if sol is None:
                sol = solve_at_time(
                    p,
                    t,
                    x_warm=prev.x_star if prev is not None else None,
                    lam_warm=prev.lambda_star if prev is not None else None,
                )
            solutions.append(sol)
            prev = sol
        except Exception as exc:  # keep sampling
            failures.append((float(t), str(exc)))
            log.warning("oracle failed at t=%s: %s", t, exc)
    return OracleTrajectory(solutions=solutions, failures=failures)


def grid_search_minimizer(
    p: TimeVaryingProblem,
    t: float,
    bounds: Sequence[Tuple[float, float]],
    resolution: int = 80,
    refine_rounds: int = 3,
) -> np.ndarray:
    """Brute-force feasible grid search with local refinement (n <= 3 only).

    Scans a regular grid over ``bounds``, keeps points with g <= 0,
    returns the best point after shrinking the box around the incumbent
    ``refine_rounds`` times.  Cross-validates the active-set solver; it
    shares no code path with it.
    """
    if p.n > 3:
        raise ValueError("grid search supports n <= 3 only")
    if len(bounds) != p.n:
        raise ValueError(f"need {p.n} bound pairs, got {len(bounds)}")
    lo = np.array([b[0] for b in bounds], float)
    hi = np.array([b[1] for b in bounds], float)

    best_x = None
    best_f = np.inf
    for _ in range(refine_rounds + 1):
        axes = [np.linspace(lo[i], hi[i], resolution) for i in range(p.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        for x in pts:
            if p.m:
                gv = np.asarray(p.g(x, t), float)
                if gv.max() > 0.0:
                    continue
            fv = float(p.f(x, t))
            if fv < best_f:
                best_f = fv
                best_x = x.copy()
        if best_x is None:
            raise InfeasibleProblemError(f"no feasible grid point at t={t} in {bounds}")
        span = (hi - lo) * (2.0 / resolution)
        lo = best_x - span
        hi = best_x + span
    return best_x
