"""Saddle Jacobian, its Schur complement, slack regularization and block inverse.

The saddle matrix

    J = [[ hess_xx_L,          grad_x_G ],
        [ lam o grad_x_G^T,    G_d      ]]

drives the primal-dual flows.  Its invertibility reduces to the Schur
complement M = G_d - lam o (grad_x_G^T hess_xx_L^{-1} grad_x_G), which is
singular exactly when some constraint has lam_i = g_i = 0 (an active-set
switch).  A positive, vanishing slack schedule keeps the regularized
complement M - diag(s(t)) invertible through those events.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lagrangian import EvalBundle
from .problem import SingularMatrixError

__all__ = [
    "SlackSchedule",
    "SaddleJacobian",
    "saddle_jacobian",
    "schur_complement",
    "slack_values",
    "ensure_invertible",
    "regularized_schur",
    "saddle_inverse",
]

log = logging.getLogger(__name__)

# Arguments of exp() in the fixed-time slack are clamped here: the factor
# diverges as t -> 0+, but any value past ~1e12 acts identically (it only
# suppresses the Schur coupling), so the cap avoids overflow downstream.
EXP_CLAMP = 28.0

# |det| below 1e-12 * max(1, ||M||_inf)^m counts as numerically singular.
DET_RTOL = 1e-12


@dataclass(frozen=True)
class SlackSchedule:
    """Time schedule of the positive diagonal slack s_i(t).

    kind="asymptotic":  s_i(t) = (|g_i| + delta) * exp(-t); positive for
    all t and vanishing as t -> infinity.

    kind="fixed_time":  s_i(t) = (|g_i| + rho) * |1 - exp((t_max - t)/t)|
    * (1 - tanh(k*t)) for 0 < t < t_max and exactly 0 for t >= t_max.
    The middle factor is taken in absolute value (the raw expression is
    negative before t_max) and its exponent is clamped so the t -> 0 limit
    stays finite; t = 0 itself evaluates at t = 1e-9.

    kind="none":  zero slack (exact Schur complement).
    """

    kind: str = "asymptotic"
    delta: float = 0.01
    rho: float = 0.001
    k: float = 1.0
    t_max: float = 1.0

    def __post_init__(self):
        if self.kind not in ("asymptotic", "fixed_time", "none"):
            raise ValueError(f"unknown slack kind {self.kind!r}")
        if self.kind == "asymptotic" and self.delta <= 0:
            raise ValueError("asymptotic slack needs delta > 0")
        if self.kind == "fixed_time":
            if self.rho <= 0 or self.k <= 0 or self.t_max <= 0:
                raise ValueError("fixed_time slack needs rho, k, t_max > 0")


def slack_values(sched: SlackSchedule, g_vals: np.ndarray, t: float) -> np.ndarray:
    """Evaluate the slack schedule entrywise; outputs are clamped >= 0."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    g_abs = np.abs(np.asarray(g_vals, dtype=float))
    if sched.kind == "none":
        return np.zeros_like(g_abs)
    if sched.kind == "asymptotic":
        return (g_abs + sched.delta) * np.exp(-t)
    # fixed_time
    if t >= sched.t_max:
        return np.zeros_like(g_abs)
    te = max(t, 1e-9)
    z = min((sched.t_max - te) / te, EXP_CLAMP)
    factor = abs(1.0 - np.exp(z)) * (1.0 - np.tanh(sched.k * te))
    return np.maximum((g_abs + sched.rho) * factor, 0.0)


@dataclass(frozen=True)
class SaddleJacobian:
    """The four blocks of J, with the bottom-left tied to the top-right row-wise."""

    top_left: np.ndarray  # hess_xx_L, (n, n)
    top_right: np.ndarray  # grad_x_G, (n, m)
    bottom_left: np.ndarray  # lam o grad_x_G^T, (m, n)
    bottom_right: np.ndarray  # G_d, (m, m)

    @cached_property
    def matrix(self) -> np.ndarray:
        n = self.top_left.shape[0]
        m = self.bottom_right.shape[0]
        J = np.zeros((n + m, n + m))
        J[:n, :n] = self.top_left
        J[:n, n:] = self.top_right
        J[n:, :n] = self.bottom_left
        J[n:, n:] = self.bottom_right
        return J


def saddle_jacobian(b: EvalBundle) -> SaddleJacobian:
    """Assemble the saddle blocks from one bundle."""
    return SaddleJacobian(
        top_left=b.hess_xx_L,
        top_right=b.grad_x_G,
        bottom_left=b.lambda_rowscale,
        bottom_right=b.G_d,
    )


def _chol_or_raise(H: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"Lagrangian Hessian not positive definite: {exc}") from exc


def hess_solve(b: EvalBundle, rhs: np.ndarray) -> np.ndarray:
    """Apply hess_xx_L^{-1} via an SPD factorization gate."""
    _chol_or_raise(b.hess_xx_L)
    return np.linalg.solve(b.hess_xx_L, rhs)


def schur_complement(b: EvalBundle) -> np.ndarray:
    """M = G_d - lam o (grad_x_G^T hess_xx_L^{-1} grad_x_G), shape (m, m).

    Entry (i, j) is delta_ij g_i - lam_i grad g_i^T hess_xx_L^{-1} grad g_j.
    """
    if b.m == 0:
        return np.zeros((0, 0))
    Y = hess_solve(b, b.grad_x_G)
    P = b.grad_x_G.T @ Y
    return np.diag(b.g_vals) - b.lam[:, None] * P


def _is_numerically_singular(M: np.ndarray) -> bool:
    m = M.shape[0]
    if m == 0:
        return False
    scale = max(1.0, float(np.max(np.abs(M))))
    if m == 1:
        return abs(M[0, 0]) < DET_RTOL * scale
    if m == 2:
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        return abs(det) < DET_RTOL * scale * scale
    if m == 3:
        det = (
            M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
            - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
            + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0])
        )
        return abs(det) < DET_RTOL * scale**3
    sign, logabs = np.linalg.slogdet(M)
    if sign == 0:
        return True
    return logabs < np.log(DET_RTOL) + m * np.log(scale)


def ensure_invertible(Mt: np.ndarray) -> np.ndarray:
    """Subtract a ridge eps_r * I, eps_r = 1e-8 * (1 + ||Mt||_inf), while
    the matrix stays numerically singular (at most three doublings), with a
    logged diagnostic per application."""
    if not _is_numerically_singular(Mt):
        return Mt
    m = Mt.shape[0]
    eps = 1e-8 * (1.0 + float(np.max(np.abs(Mt))))
    for _ in range(3):
        log.warning("regularized Schur complement near singular; applying ridge %.3e", eps)
        Mt = Mt - eps * np.eye(m)
        if not _is_numerically_singular(Mt):
            break
        eps *= 2.0
    return Mt


def regularized_schur(b: EvalBundle, sched: SlackSchedule, t: float | None = None) -> np.ndarray:
    """Slack-regularized complement M - diag(s(t)), guaranteed invertible.

    If the slacked matrix is still numerically singular a ridge is
    subtracted, see ensure_invertible.
    """
    M = schur_complement(b)
    if b.m == 0:
        return M
    s = slack_values(sched, b.g_vals, b.t if t is None else t)
    return ensure_invertible(M - np.diag(s))


def saddle_inverse(b: EvalBundle, m_reg: np.ndarray) -> np.ndarray:
    """Materialize the (n+m) x (n+m) inverse of J with M replaced by m_reg.

    Blocks:
        A = H^{-1} (I + G Mr^{-1} (lam o G^T) H^{-1})
        B = -H^{-1} G Mr^{-1}
        C = -Mr^{-1} (lam o G^T) H^{-1}
        D = Mr^{-1}
    where H = hess_xx_L and G = grad_x_G.  With m_reg equal to the exact
    Schur complement this is the exact inverse of the saddle matrix.
    """
    n, m = b.n, b.m
    _chol_or_raise(b.hess_xx_L)
    Hi = np.linalg.solve(b.hess_xx_L, np.eye(n))
    if m == 0:
        return Hi
    try:
        Mi = np.linalg.solve(m_reg, np.eye(m))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"regularized Schur complement singular: {exc}") from exc
    if not np.all(np.isfinite(Mi)):
        raise SingularMatrixError("regularized Schur complement produced non-finite inverse")
    T = b.lambda_rowscale @ Hi  # (m, n)
    Y = Hi @ b.grad_x_G  # (n, m)
    A = Hi + Y @ Mi @ T
    B = -Y @ Mi
    C = -Mi @ T
    out = np.zeros((n + m, n + m))
    out[:n, :n] = A
    out[:n, n:] = B
    out[n:, :n] = C
    out[n:, n:] = Mi
    return out
