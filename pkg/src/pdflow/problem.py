"""Time-varying constrained convex problem descriptions.

A problem bundles the objective f(x, t), the inequality constraints
g_i(x, t) <= 0 and every first/second/mixed derivative the primal-dual
flows consume.  Derivatives are supplied analytically; any slot left out
is filled with a central finite-difference fallback so arbitrary smooth
problems remain usable.

All evaluation maps are pure: a problem is immutable after construction
and safe to share between threads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "NumericalDomainError",
    "SingularMatrixError",
    "DivergenceError",
    "InfeasibleProblemError",
    "TimeVaryingProblem",
    "PrimalDualState",
    "problem_from_functions",
    "eval_objective",
    "eval_constraints",
    "DerivativeCheckReport",
    "check_derivatives",
    "assumption_report",
]

# Relative step used by the finite-difference fallback, scaled per
# coordinate by (1 + |value|).
FD_STEP = 1e-6


class DimensionMismatchError(ValueError):
    """An argument has the wrong shape for the problem."""


class NumericalDomainError(ValueError):
    """An evaluation produced a non-finite value."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix required to be invertible is (numerically) singular."""


class DivergenceError(RuntimeError):
    """Integration escaped to non-finite values.

    Carries the last finite state and the step index at which the blow-up
    was detected.
    """

    def __init__(self, message: str, last_state=None, step_index: int = -1):
        super().__init__(message)
        self.last_state = last_state
        self.step_index = step_index


class InfeasibleProblemError(RuntimeError):
    """No feasible candidate was found (or feasible grid is empty)."""


def _as_vector(x, n: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise DimensionMismatchError(f"{name} must have shape ({n},), got {x.shape}")
    return x


@dataclass(frozen=True)
class PrimalDualState:
    """One point (x, lambda, t) of the primal-dual trajectory."""

    x: np.ndarray
    lam: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "lam", np.atleast_1d(np.asarray(self.lam, dtype=float)))
        object.__setattr__(self, "t", float(self.t))
        if self.t < 0:
            raise ValueError(f"time must be nonnegative, got {self.t}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.lam))):
            raise NumericalDomainError("state contains non-finite entries")
        if self.lam.size and self.lam.min() < 0:
            raise ValueError(f"dual variables must be nonnegative, got min {self.lam.min()}")


@dataclass(frozen=True)
class TimeVaryingProblem:
    """Inequality-constrained convex program with time-varying data.

    minimize_x  f(x, t)   subject to   g_i(x, t) <= 0,  i = 1..m.

    Fields
    ------
    n, m
        Primal dimension and number of inequality constraints.
    f, grad_x_f, hess_xx_f, grad_xt_f
        Objective and its x-gradient (n,), x-Hessian (n, n) and mixed
        x-t derivative (n,).
    g, grad_x_g, grad_t_g, grad_xt_g, hess_xx_g
        Constraint vector (m,), constraint gradients stacked column-wise
        (n, m), time derivatives (m,), mixed derivatives (n, m) and the
        per-constraint Hessians stacked as (m, n, n).
    mu
        Strong-convexity modulus of f in x (metadata, checked by sampling).
    rate_bound, lipschitz_grad, hess_bound
        Optional assumption metadata: bound on |d g_i / dt|, Lipschitz
        constant of grad_x L, uniform Hessian bound.  Stored only; never
        enforced symbolically.
    derivative_modes
        Which slots are analytic and which fall back to finite differences.
    """

    n: int
    m: int
    f: Callable[[np.ndarray, float], float]
    grad_x_f: Callable[[np.ndarray, float], np.ndarray]
    hess_xx_f: Callable[[np.ndarray, float], np.ndarray]
    grad_xt_f: Callable[[np.ndarray, float], np.ndarray]
    g: Callable[[np.ndarray, float], np.ndarray]
    grad_x_g: Callable[[np.ndarray, float], np.ndarray]
    grad_t_g: Callable[[np.ndarray, float], np.ndarray]
    grad_xt_g: Callable[[np.ndarray, float], np.ndarray]
    hess_xx_g: Callable[[np.ndarray, float], np.ndarray]
    mu: float = 1.0
    name: str = "problem"
    rate_bound: Optional[Callable[[float], np.ndarray]] = None
    lipschitz_grad: Optional[float] = None
    hess_bound: Optional[float] = None
    derivative_modes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError(f"primal dimension must be positive, got {self.n}")
        # m == 0 (no constraints) is accepted: several diagnostics run on
        # unconstrained problems and the algebra degrades gracefully.
        if self.m < 0:
            raise ValueError(f"constraint count must be nonnegative, got {self.m}")
        if self.mu < 0:
            raise ValueError(f"strong-convexity modulus must be nonnegative, got {self.mu}")

    # -- convenience wrappers ------------------------------------------------

    def state(self, x, lam=None, t: float = 0.0) -> PrimalDualState:
        """Build a validated state for this problem."""
        lam = np.zeros(self.m) if lam is None else np.atleast_1d(np.asarray(lam, float))
        x = _as_vector(x, self.n, "x")
        if lam.shape != (self.m,):
            raise DimensionMismatchError(f"lambda must have shape ({self.m},), got {lam.shape}")
        return PrimalDualState(x=x, lam=lam, t=t)


def eval_objective(p: TimeVaryingProblem, x, t: float) -> float:
    """Objective value f(x, t) with shape and finiteness checks."""
    x = _as_vector(x, p.n, "x")
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    val = float(p.f(x, t))
    if not np.isfinite(val):
        raise NumericalDomainError(f"objective is non-finite at t={t}: {val}")
    return val


def eval_constraints(p: TimeVaryingProblem, x, t: float) -> np.ndarray:
    """Constraint vector (g_1, ..., g_m) at (x, t)."""
    x = _as_vector(x, p.n, "x")
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    vals = np.atleast_1d(np.asarray(p.g(x, t), dtype=float))
    if vals.shape != (p.m,):
        raise DimensionMismatchError(f"g returned shape {vals.shape}, expected ({p.m},)")
    if not np.all(np.isfinite(vals)):
        raise NumericalDomainError(f"constraints non-finite at t={t}: {vals}")
    return vals


# -- finite-difference fallback machinery -------------------------------------


def _fd_grad_x(fun, n):
    def grad(x, t):
        out = np.empty(n)
        for i in range(n):
            h = FD_STEP * (1.0 + abs(x[i]))
            e = np.zeros(n)
            e[i] = h
            out[i] = (fun(x + e, t) - fun(x - e, t)) / (2 * h)
        return out

    return grad


def _fd_grad_t(fun):
    def grad(x, t):
        h = FD_STEP * (1.0 + abs(t))
        tm = max(t - h, 0.0)
        return (np.asarray(fun(x, t + h)) - np.asarray(fun(x, tm))) / (t + h - tm)

    return grad


def _fd_jac_x(fun, n):
    """Jacobian d(fun)/dx with fun vector-valued; columns indexed by x."""

    def jac(x, t):
        cols = []
        for i in range(n):
            h = FD_STEP * (1.0 + abs(x[i]))
            e = np.zeros(n)
            e[i] = h
            cols.append((np.asarray(fun(x + e, t)) - np.asarray(fun(x - e, t))) / (2 * h))
        return np.stack(cols, axis=0)

    return jac


def problem_from_functions(
    f,
    g,
    n: int,
    m: int,
    *,
    mu: float = 1.0,
    name: str = "problem",
    grad_x_f=None,
    hess_xx_f=None,
    grad_xt_f=None,
    grad_x_g=None,
    grad_t_g=None,
    grad_xt_g=None,
    hess_xx_g=None,
    rate_bound=None,
    lipschitz_grad=None,
    hess_bound=None,
) -> TimeVaryingProblem:
    """Assemble a problem, filling missing derivative slots by central differences.

    ``g`` may be None when m == 0.  Finite-difference slots use step
    ``FD_STEP * (1 + |coordinate|)``; second derivatives difference the
    (possibly analytic) first-derivative maps, which keeps rounding error
    near the square root of machine precision instead of its fourth root.
    """
    modes = {}
    if m == 0 and g is None:
        g = lambda x, t: np.zeros(0)

    def mode(slot, supplied):
        modes[slot] = "analytic" if supplied is not None else "finite_difference"

    mode("grad_x_f", grad_x_f)
    mode("hess_xx_f", hess_xx_f)
    mode("grad_xt_f", grad_xt_f)
    mode("grad_x_g", grad_x_g)
    mode("grad_t_g", grad_t_g)
    mode("grad_xt_g", grad_xt_g)
    mode("hess_xx_g", hess_xx_g)

    gx_f = grad_x_f or _fd_grad_x(f, n)
    hs_f = hess_xx_f or (lambda x, t, _j=_fd_jac_x(gx_f, n): 0.5 * (_j(x, t) + _j(x, t).T))
    gxt_f = grad_xt_f or _fd_grad_t(gx_f)

    # _fd_jac_x stacks d(fun)/dx_i along axis 0, which already matches the
    # (n, m) column layout of grad_x_g.
    gx_g = grad_x_g or _fd_jac_x(g, n)
    gt_g = grad_t_g or _fd_grad_t(g)
    gxt_g = grad_xt_g or _fd_grad_t(gx_g)
    if hess_xx_g is None:

        def hs_g(x, t, _jac=_fd_jac_x(lambda x_, t_: gx_g(x_, t_).ravel(), n)):
            # derivative of vec(grad_x_g) wrt x, reshaped to (m, n, n)
            j = _jac(x, t)  # (n, n*m): row i = d vec / d x_i
            stack = j.reshape(n, n, m).transpose(2, 1, 0)
            return 0.5 * (stack + stack.transpose(0, 2, 1))

    else:
        raw = hess_xx_g

        def hs_g(x, t):
            h = raw(x, t)
            if isinstance(h, (list, tuple)):
                h = np.stack([np.asarray(hi, float) for hi in h]) if h else np.zeros((0, n, n))
            return np.asarray(h, float).reshape(m, n, n)

    return TimeVaryingProblem(
        n=n,
        m=m,
        f=f,
        grad_x_f=gx_f,
        hess_xx_f=hs_f,
        grad_xt_f=gxt_f,
        g=g,
        grad_x_g=gx_g,
        grad_t_g=gt_g,
        grad_xt_g=gxt_g,
        hess_xx_g=hs_g,
        mu=mu,
        name=name,
        rate_bound=rate_bound,
        lipschitz_grad=lipschitz_grad,
        hess_bound=hess_bound,
        derivative_modes=modes,
    )


# -- derivative validation -----------------------------------------------------


@dataclass
class DerivativeCheckReport:
    """Per-slot worst relative error between analytic maps and central differences."""

    max_rel_error: dict
    worst_sample: dict
    failed_slots: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return not self.failed_slots

    def summary(self) -> str:
        lines = [f"derivative check (tolerance {self.tolerance:g}):"]
        for slot, err in sorted(self.max_rel_error.items()):
            status = "FAIL" if slot in self.failed_slots else "ok"
            lines.append(f"  {slot:<10s} max rel err {err:.3e}  [{status}]")
        return "\n".join(lines)


def _rel_err(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)
    diff = float(np.max(np.abs(a - b))) if a.size else 0.0
    return diff / scale


def check_derivatives(
    p: TimeVaryingProblem,
    samples: Sequence,
    h: float = 1e-6,
    tolerance: float = 1e-5,
) -> DerivativeCheckReport:
    """Compare every derivative slot against central finite differences.

    First-order slots are differenced from f and g directly; second-order
    and mixed slots are differenced from the first-derivative maps (the
    chain keeps each comparison first-order in h, so the default h = 1e-6
    resolves a 1e-5 tolerance in double precision).

    ``samples`` is a nonempty sequence of (x, t) pairs.  Evaluation
    failures propagate annotated with the sample index.
    """
    if not (1e-9 < h < 1e-3):
        raise ValueError(f"step h must lie in (1e-9, 1e-3), got {h}")
    if len(samples) == 0:
        raise ValueError("need at least one sample")

    worst = {}
    where = {}

    def record(slot, err, idx):
        if err > worst.get(slot, -1.0):
            worst[slot] = err
            where[slot] = idx

    def diff_x(fun, x, t):
        cols = []
        for i in range(p.n):
            step = h * (1.0 + abs(x[i]))
            e = np.zeros(p.n)
            e[i] = step
            cols.append((np.asarray(fun(x + e, t), float) - np.asarray(fun(x - e, t), float)) / (2 * step))
        return np.stack(cols, axis=0)

    def diff_t(fun, x, t):
        step = h * (1.0 + abs(t))
        tm = max(t - step, 0.0)
        return (np.asarray(fun(x, t + step), float) - np.asarray(fun(x, tm), float)) / (t + step - tm)

    for idx, (x, t) in enumerate(samples):
        x = _as_vector(x, p.n, "x")
        t = float(t)
        try:
            record("grad_x_f", _rel_err(p.grad_x_f(x, t), diff_x(p.f, x, t).ravel()), idx)
            record("grad_xt_f", _rel_err(p.grad_xt_f(x, t), diff_t(p.grad_x_f, x, t)), idx)
            hess = np.asarray(p.hess_xx_f(x, t), float)
            record("hess_xx_f", _rel_err(hess, diff_x(p.grad_x_f, x, t)), idx)
            if p.m:
                record("grad_x_g", _rel_err(p.grad_x_g(x, t), diff_x(p.g, x, t)), idx)
                record("grad_t_g", _rel_err(p.grad_t_g(x, t), diff_t(p.g, x, t)), idx)
                record("grad_xt_g", _rel_err(p.grad_xt_g(x, t), diff_t(p.grad_x_g, x, t)), idx)
                hg = np.asarray(p.hess_xx_g(x, t), float).reshape(p.m, p.n, p.n)
                fd = diff_x(lambda x_, t_: np.asarray(p.grad_x_g(x_, t_)).ravel(), x, t)
                fd = fd.reshape(p.n, p.n, p.m).transpose(2, 1, 0)
                record("hess_xx_g", _rel_err(hg, fd), idx)
        except Exception as exc:  # annotate with the failing sample
            raise type(exc)(f"sample {idx} (t={t}): {exc}") from exc

    failed = [slot for slot, err in worst.items() if err > tolerance]
    return DerivativeCheckReport(
        max_rel_error=worst, worst_sample=where, failed_slots=failed, tolerance=tolerance
    )


def assumption_report(p: TimeVaryingProblem, states: Sequence[PrimalDualState], active_tol: float = 1e-6):
    """Sampled diagnostics for the regularity assumptions the flows rely on.

    Checks, at each state: strong convexity (min eigenvalue of the
    objective Hessian >= mu - 1e-8), convexity of every constraint
    Hessian, linear independence and cardinality of near-active
    constraint gradients, and that at least one constraint gradient is
    not orthogonal to the objective gradient.
    """
    report = {
        "min_hess_eig": np.inf,
        "min_constraint_hess_eig": np.inf,
        "active_rank_ok": True,
        "active_count_ok": True,
        "non_orthogonal_ok": True,
        "violations": [],
    }
    for s in states:
        H = np.asarray(p.hess_xx_f(s.x, s.t), float)
        eig = float(np.linalg.eigvalsh(0.5 * (H + H.T)).min())
        report["min_hess_eig"] = min(report["min_hess_eig"], eig)
        if eig < p.mu - 1e-8:
            report["violations"].append(("strong_convexity", s.t, eig))
        if p.m:
            hg = np.asarray(p.hess_xx_g(s.x, s.t), float).reshape(p.m, p.n, p.n)
            for i in range(p.m):
                ge = float(np.linalg.eigvalsh(0.5 * (hg[i] + hg[i].T)).min())
                report["min_constraint_hess_eig"] = min(report["min_constraint_hess_eig"], ge)
                if ge < -1e-8:
                    report["violations"].append(("constraint_convexity", s.t, i, ge))
            gvals = eval_constraints(p, s.x, s.t)
            active = np.flatnonzero(gvals >= -active_tol)
            if active.size:
                G = np.asarray(p.grad_x_g(s.x, s.t), float)[:, active]
                if active.size > p.n:
                    report["active_count_ok"] = False
                    report["violations"].append(("active_cardinality", s.t, active.tolist()))
                if np.linalg.matrix_rank(G, tol=1e-10) < active.size:
                    report["active_rank_ok"] = False
                    report["violations"].append(("active_rank", s.t, active.tolist()))
            gf = np.asarray(p.grad_x_f(s.x, s.t), float)
            G_all = np.asarray(p.grad_x_g(s.x, s.t), float)
            inner = np.abs(G_all.T @ gf)
            if np.linalg.norm(gf) > 1e-12 and inner.size and inner.max() <= 1e-12:
                report["non_orthogonal_ok"] = False
                report["violations"].append(("orthogonality", s.t))
    return report
