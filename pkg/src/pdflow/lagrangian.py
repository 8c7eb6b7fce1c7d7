"""Lagrangian-derived quantities evaluated once per state.

Everything the flows need at one (x, lambda, t) is assembled into a
single bundle from a single evaluation of the problem, so no two fields
can disagree about the evaluation point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .problem import (
    DimensionMismatchError,
    NumericalDomainError,
    PrimalDualState,
    TimeVaryingProblem,
)

__all__ = ["EvalBundle", "grad_x_lagrangian", "lagrangian_value", "assemble_bundle", "lyapunov_value"]

log = logging.getLogger(__name__)

# Asymmetry beyond this in an assembled Hessian triggers a warning before
# symmetrization (finite-difference fallbacks break exact symmetry).
SYMMETRY_WARN = 1e-10


@dataclass(frozen=True)
class EvalBundle:
    """All Lagrangian derivatives at one primal-dual state.

    ``grad_x_L`` is the x-gradient of L = f + sum_i lam_i g_i, and
    ``hess_xx_L`` its (symmetrized) x-Hessian.  ``grad_x_G`` stacks the
    constraint gradients column-wise; ``g_vals`` holds the constraint
    values whose diagonal embedding is ``G_d``.
    """

    x: np.ndarray
    lam: np.ndarray
    t: float
    g_vals: np.ndarray
    grad_x_L: np.ndarray
    hess_xx_L: np.ndarray
    grad_x_G: np.ndarray
    grad_t_G: np.ndarray
    grad_xt_G: np.ndarray
    grad_xt_f: np.ndarray

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def m(self) -> int:
        return self.lam.size

    @cached_property
    def G_d(self) -> np.ndarray:
        """Constraint values as a diagonal (m, m) matrix."""
        return np.diag(self.g_vals)

    @cached_property
    def lambda_rowscale(self) -> np.ndarray:
        """Row i is lam_i times the i-th constraint gradient, shape (m, n)."""
        return self.lam[:, None] * self.grad_x_G.T


def grad_x_lagrangian(p: TimeVaryingProblem, s: PrimalDualState) -> np.ndarray:
    """x-gradient of the Lagrangian: grad f + sum_i lam_i grad g_i."""
    if s.x.shape != (p.n,) or s.lam.shape != (p.m,):
        raise DimensionMismatchError(
            f"state shapes {s.x.shape}/{s.lam.shape} do not match problem ({p.n},)/({p.m},)"
        )
    grad = np.asarray(p.grad_x_f(s.x, s.t), dtype=float)
    if p.m:
        grad = grad + np.asarray(p.grad_x_g(s.x, s.t), dtype=float) @ s.lam
    return grad


def lagrangian_value(p: TimeVaryingProblem, s: PrimalDualState) -> float:
    """L(x, lambda, t) = f + lambda . g."""
    val = float(p.f(s.x, s.t))
    if p.m:
        val += float(s.lam @ np.asarray(p.g(s.x, s.t), dtype=float))
    return val


def _assemble_raw(p: TimeVaryingProblem, x: np.ndarray, lam: np.ndarray, t: float) -> EvalBundle:
    """Bundle assembly without per-slot validation (flow hot path).

    Callers are expected to check the finiteness of whatever they derive
    from the bundle; assemble_bundle is the validated entry point.
    """
    gf = np.asarray(p.grad_x_f(x, t), dtype=float)
    hf = np.asarray(p.hess_xx_f(x, t), dtype=float)
    gxtf = np.asarray(p.grad_xt_f(x, t), dtype=float)
    if p.m:
        gv = np.asarray(p.g(x, t), dtype=float)
        G = np.asarray(p.grad_x_g(x, t), dtype=float)
        gt = np.asarray(p.grad_t_g(x, t), dtype=float)
        gxt = np.asarray(p.grad_xt_g(x, t), dtype=float)
        hg = np.asarray(p.hess_xx_g(x, t), dtype=float).reshape(p.m, p.n, p.n)
        grad_L = gf + G @ lam
        hess_L = hf + np.tensordot(lam, hg, axes=1)
    else:
        gv = np.zeros(0)
        G = np.zeros((p.n, 0))
        gt = np.zeros(0)
        gxt = np.zeros((p.n, 0))
        grad_L = gf
        hess_L = hf

    if p.n > 1:
        asym = float(np.max(np.abs(hess_L - hess_L.T)))
        if asym > SYMMETRY_WARN:
            log.warning("Lagrangian Hessian asymmetry %.3e at t=%s; symmetrizing", asym, t)
        hess_L = 0.5 * (hess_L + hess_L.T)

    return EvalBundle(
        x=x,
        lam=lam,
        t=t,
        g_vals=gv,
        grad_x_L=grad_L,
        hess_xx_L=hess_L,
        grad_x_G=G,
        grad_t_G=gt,
        grad_xt_G=gxt,
        grad_xt_f=gxtf,
    )


def assemble_bundle(p: TimeVaryingProblem, s: PrimalDualState) -> EvalBundle:
    """Evaluate every derivative of L at one state.

    Raises NumericalDomainError naming the offending slot if any
    derivative comes back non-finite.
    """
    if s.x.shape != (p.n,) or s.lam.shape != (p.m,):
        raise DimensionMismatchError(
            f"state shapes {s.x.shape}/{s.lam.shape} do not match problem ({p.n},)/({p.m},)"
        )
    b = _assemble_raw(p, s.x, s.lam, s.t)
    for name in ("g_vals", "grad_x_L", "hess_xx_L", "grad_x_G", "grad_t_G", "grad_xt_G", "grad_xt_f"):
        arr = getattr(b, name)
        if arr.size and not np.all(np.isfinite(arr)):
            raise NumericalDomainError(f"derivative slot '{name}' non-finite at t={s.t}")
    return b


def lyapunov_value(bundle: EvalBundle) -> float:
    """Candidate Lyapunov value V = 0.5 * ||grad_x L||^2 (zero only at stationarity)."""
    g = bundle.grad_x_L
    return 0.5 * float(g @ g)
