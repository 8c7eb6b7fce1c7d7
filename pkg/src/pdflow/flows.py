"""Right-hand sides of the projected primal-dual tracking flows.

Three flavours share one structure: a prediction term compensating the
problem's explicit time drift, a correction term contracting toward the
KKT set (plain gradient for the asymptotic flow, normalized power terms
for the fixed-time and finite-time flows), and an augmentation term that
lets multipliers escape zero when a constraint re-activates.  The stacked
velocity is

    (dx, dlam) = Jr^{-1} (prediction + correction) + augmentation,

where Jr^{-1} is the saddle inverse with the slack-regularized Schur
complement, and the dlam block passes through a componentwise projection
that keeps the multipliers nonnegative.

Along any state with lam >= 0 the construction gives the exact decay

    dV/dt = -2 * alpha * V                      (asymptotic)
    dV/dt = -a1 V^{1-gamma1/2} - a2 V^{1-gamma2/2}   (fixed-time)

for V = 0.5 ||grad_x L||^2, independent of the slack schedule, because
the top block-row of the regularized saddle matrix is untouched by the
regularization; projection only makes dV/dt more negative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lagrangian import EvalBundle, lyapunov_value
from .problem import (
    NumericalDomainError,
    PrimalDualState,
    SingularMatrixError,
    TimeVaryingProblem,
)
from .saddle import SlackSchedule, ensure_invertible, slack_values

__all__ = [
    "FlowParams",
    "FlowEval",
    "prediction_term",
    "correction_asymptotic",
    "correction_fixed_time",
    "augmentation_term",
    "project_velocity",
    "flow_eval",
    "flow_rhs",
    "decay_targets",
    "decay_residual",
    "settling_time_bound",
    "finite_time_bound",
]

log = logging.getLogger(__name__)

# Cap on the c2 * ||grad_x L||^{-gamma2} coefficient; it only binds far
# outside the tracking regime and is logged when it does.
FIXED_COEF_CAP = 1e8


@dataclass(frozen=True)
class FlowParams:
    """Gains and exponents selecting one of the three flows.

    kind="asymptotic" uses the correction gain alpha > 0.
    kind="fixed_time" uses c1, c2 > 0, gamma1 in (0, 1), gamma2 < 0.
    kind="finite_time" is fixed_time with c2 = 0 (initial-condition
    dependent settling bound).

    eps_grad is the norm below which grad_x L counts as zero in the
    normalized correction terms; eps_lambda is the threshold of the
    projection case split (floating point cannot distinguish lam_i > 0
    from lam_i = 0 exactly).
    """

    kind: str = "asymptotic"
    alpha: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    gamma1: float = 0.2
    gamma2: float = -2.0
    eps_grad: float = 1e-12
    eps_lambda: float = 1e-9

    def __post_init__(self):
        if self.kind not in ("asymptotic", "fixed_time", "finite_time"):
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive (it also gains the "
                             "complementarity contraction of the fixed-time kinds)")
        if self.kind in ("fixed_time", "finite_time"):
            if self.c1 <= 0:
                raise ValueError("c1 must be positive")
            if not 0 < self.gamma1 < 1:
                raise ValueError(f"gamma1 must lie in (0, 1), got {self.gamma1}")
            if self.kind == "fixed_time":
                if self.c2 <= 0:
                    raise ValueError("fixed_time flow needs c2 > 0")
                if self.gamma2 >= 0:
                    raise ValueError(f"gamma2 must be negative, got {self.gamma2}")
            elif self.c2 != 0:
                raise ValueError("finite_time flow requires c2 == 0")
        if self.eps_grad <= 0 or self.eps_lambda <= 0:
            raise ValueError("eps_grad and eps_lambda must be positive")


def prediction_term(b: EvalBundle) -> np.ndarray:
    """Feed-forward block compensating the problem's time drift.

    Top n entries: -(grad_xt_f + grad_xt_G lam); bottom m entries:
    -lam_i * (grad_t_G)_i componentwise.
    """
    top = -(b.grad_xt_f + b.grad_xt_G @ b.lam)
    bottom = -b.lam * b.grad_t_G
    return np.concatenate([top, bottom])


def correction_asymptotic(b: EvalBundle, alpha: float) -> np.ndarray:
    """Exponential-rate correction: top -alpha grad_x_L, bottom -2 alpha g_i lam_i.

    The bottom block drives the complementarity products toward zero: the
    saddle system's bottom row reads d/dt(lam_i g_i) = (bottom)_i, so
    -2 alpha g_i lam_i contracts every product at the same rate 2 alpha
    at which the Lyapunov value contracts, and the whole KKT residual
    decays uniformly.  (A positive bottom block would grow the products
    exponentially and the multipliers would run away.)
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return np.concatenate([-alpha * b.grad_x_L, -2.0 * alpha * b.g_vals * b.lam])


def _fixed_coef(norm: float, params: FlowParams) -> float:
    """c1 ||gL||^{-gamma1} + c2 ||gL||^{-gamma2}, with the blow-up capped."""
    c1_term = params.c1 * norm ** (-params.gamma1)
    c2_term = params.c2 * norm ** (-params.gamma2) if params.c2 else 0.0
    if c2_term > FIXED_COEF_CAP:
        log.debug("fixed-time coefficient cap binding: %.3e > %.1e", c2_term, FIXED_COEF_CAP)
        c2_term = FIXED_COEF_CAP
    return c1_term + c2_term


def correction_fixed_time(b: EvalBundle, params: FlowParams) -> np.ndarray:
    """Normalized correction giving fixed-time (or finite-time) decay.

    Top block: -c1 gL / ||gL||^{gamma1} - c2 gL / ||gL||^{gamma2}, taken
    as zero when ||gL|| < eps_grad; bottom block: -2 alpha g_i lam_i
    (complementarity contraction, see correction_asymptotic).
    """
    if params.kind not in ("fixed_time", "finite_time"):
        raise ValueError(f"correction_fixed_time needs a fixed/finite-time kind, got {params.kind!r}")
    norm = float(np.linalg.norm(b.grad_x_L))
    if norm < params.eps_grad:
        top = np.zeros(b.n)
    else:
        top = -_fixed_coef(norm, params) * b.grad_x_L
    return np.concatenate([top, -2.0 * params.alpha * b.g_vals * b.lam])


def augmentation_term(b: EvalBundle) -> np.ndarray:
    """Multiplier escape term; vanishes only on the optimizer trajectory.

    With w = grad_x_G^T grad_x_L: top -hess_xx_L^{-1} grad_x_G w, bottom w.
    """
    from .saddle import hess_solve

    w = b.grad_x_G.T @ b.grad_x_L
    top = -hess_solve(b, b.grad_x_G @ w)
    return np.concatenate([top, w])


def project_velocity(a: float, v: float, eps_lambda: float = 1e-9) -> float:
    """Componentwise dual projection: v if a > eps_lambda, max(0, v) otherwise.

    a is a multiplier value (must be >= 0); v is its candidate velocity.
    """
    if a < 0:
        raise ValueError(f"multiplier must be nonnegative, got {a}")
    return v if a > eps_lambda else max(0.0, v)


@dataclass(frozen=True)
class FlowEval:
    """One right-hand-side evaluation with its diagnostics."""

    v_x: np.ndarray
    v_lam: np.ndarray  # projected
    v_lam_raw: np.ndarray  # before projection
    bundle: EvalBundle
    V: float

    @property
    def velocity(self) -> np.ndarray:
        return np.concatenate([self.v_x, self.v_lam])

    def lyapunov_rate(self) -> float:
        """Analytic dV/dt along the projected flow at this state."""
        b = self.bundle
        dgrad = b.hess_xx_L @ self.v_x + b.grad_xt_f
        if b.m:
            dgrad = dgrad + b.grad_x_G @ self.v_lam + b.grad_xt_G @ b.lam
        return float(b.grad_x_L @ dgrad)


def _flow_eval_arrays(
    p: TimeVaryingProblem,
    x: np.ndarray,
    lam: np.ndarray,
    t: float,
    params: FlowParams,
    sched: SlackSchedule,
) -> FlowEval:
    """Projected flow velocity from raw arrays (integrator hot path).

    The saddle inverse is applied through factorizations: one SPD solve
    with the Lagrangian Hessian for the stacked right-hand sides and one
    dense solve with the regularized Schur complement.
    """
    from .lagrangian import _assemble_raw

    b = _assemble_raw(p, x, lam, t)
    n, m = b.n, b.m

    # top/bottom forcing: prediction + correction
    if params.kind == "asymptotic":
        coef = params.alpha
    else:
        norm_gl = float(np.linalg.norm(b.grad_x_L))
        coef = _fixed_coef(norm_gl, params) if norm_gl >= params.eps_grad else 0.0
    u = -(coef * b.grad_x_L + b.grad_xt_f + (b.grad_xt_G @ lam if m else 0.0))

    try:
        np.linalg.cholesky(b.hess_xx_L)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            f"Lagrangian Hessian not positive definite at t={t}: {exc}"
        ) from exc

    if m:
        w_b = -lam * (2.0 * params.alpha * b.g_vals + b.grad_t_G)
        rhs = np.empty((n, m + 1))
        rhs[:, :m] = b.grad_x_G
        rhs[:, m] = u
        sol = np.linalg.solve(b.hess_xx_L, rhs)
        Y, t1 = sol[:, :m], sol[:, m]
        M = -lam[:, None] * (b.grad_x_G.T @ Y)
        idx = np.arange(m)
        M[idx, idx] += b.g_vals
        M[idx, idx] -= slack_values(sched, b.g_vals, t)
        Mt = ensure_invertible(M)
        q = lam * (b.grad_x_G.T @ t1)
        try:
            r = np.linalg.solve(Mt, q - w_b)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(f"regularized Schur complement singular at t={t}") from exc
        wa = b.grad_x_G.T @ b.grad_x_L
        v_x = t1 + Y @ (r - wa)
        v_lam_raw = wa - r
        v_lam = np.where(lam > params.eps_lambda, v_lam_raw, np.maximum(0.0, v_lam_raw))
    else:
        v_x = np.linalg.solve(b.hess_xx_L, u)
        v_lam_raw = np.zeros(0)
        v_lam = v_lam_raw

    if not (np.all(np.isfinite(v_x)) and np.all(np.isfinite(v_lam))):
        raise NumericalDomainError(
            f"flow velocity non-finite at t={t}, x={x.tolist()}, lam={lam.tolist()}"
        )
    return FlowEval(v_x=v_x, v_lam=v_lam, v_lam_raw=v_lam_raw, bundle=b, V=lyapunov_value(b))


def flow_eval(
    p: TimeVaryingProblem,
    s: PrimalDualState,
    params: FlowParams,
    sched: SlackSchedule,
) -> FlowEval:
    """Evaluate the projected flow velocity and diagnostics at one state."""
    if s.lam.size and s.lam.min() < 0:
        raise ValueError("dual variables must be nonnegative")
    return _flow_eval_arrays(p, s.x, s.lam, s.t, params, sched)


def flow_rhs(
    p: TimeVaryingProblem,
    s: PrimalDualState,
    params: FlowParams,
    sched: SlackSchedule,
) -> np.ndarray:
    """Stacked projected velocity (dx, dlam) of the selected flow."""
    return flow_eval(p, s, params, sched).velocity


def decay_targets(params: FlowParams, V: float) -> float:
    """The decay rate the Lyapunov certificate promises at value V (>= 0)."""
    if params.kind == "asymptotic":
        return 2.0 * params.alpha * V
    a1 = params.c1 * 2.0 ** (1.0 - params.gamma1 / 2.0)
    a2 = params.c2 * 2.0 ** (1.0 - params.gamma2 / 2.0)
    return a1 * V ** (1.0 - params.gamma1 / 2.0) + a2 * V ** (1.0 - params.gamma2 / 2.0)


def decay_residual(ev: FlowEval, params: FlowParams) -> float:
    """dV/dt plus the certified decay; <= ~0 when the certificate holds."""
    return ev.lyapunov_rate() + decay_targets(params, ev.V)


def settling_time_bound(params: FlowParams) -> float:
    """Initialization-independent settling bound of the fixed-time flow.

        T_max = 2^{gamma1/2} / (c1 gamma1) - 2^{gamma2/2} / (c2 gamma2)
    """
    if params.kind != "fixed_time":
        raise ValueError("settling_time_bound applies to the fixed_time kind only; "
                         "use finite_time_bound for finite_time")
    return (
        2.0 ** (params.gamma1 / 2.0) / (params.c1 * params.gamma1)
        - 2.0 ** (params.gamma2 / 2.0) / (params.c2 * params.gamma2)
    )


def finite_time_bound(params: FlowParams, s0: PrimalDualState, p: TimeVaryingProblem) -> float:
    """Initialization-dependent settling bound of the finite-time flow (c2 = 0):

        T(x0, lam0) <= ||grad_x L(x0, lam0, t0)||^{gamma1} / (c1 gamma1)
    """
    if params.kind != "finite_time":
        raise ValueError("finite_time_bound applies to the finite_time kind only")
    from .lagrangian import grad_x_lagrangian

    norm = float(np.linalg.norm(grad_x_lagrangian(p, s0)))
    if norm < params.eps_grad:
        return 0.0
    return norm**params.gamma1 / (params.c1 * params.gamma1)
