"""Fixed-step integration of the projected flows.

A classical 4-stage Runge-Kutta step is applied to the projected field
(the dual projection is evaluated inside every stage) followed by a
componentwise clamp lam := max(lam, 0): stage combinations are not
exactly invariant under the projection, and nonnegative multipliers are
a hard feasibility requirement, not an approximation target.

Recorded diagnostics (Lyapunov value, decay residual, active pattern)
are computed from the analytic flow at the recorded states, never from
trajectory differencing, so they measure the flow and not the stepping
error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .flows import FlowParams, _flow_eval_arrays, decay_residual, flow_eval
from .problem import DivergenceError, PrimalDualState, TimeVaryingProblem
from .saddle import SlackSchedule

__all__ = [
    "IntegratorConfig",
    "TrajectorySample",
    "Trajectory",
    "step_once",
    "integrate",
    "detect_active_switches",
]

# A constraint counts as active in the recorded pattern when g_i >= -ACTIVE_TOL.
ACTIVE_TOL = 1e-6

# Below this Lyapunov value the normalized fixed/finite-time correction is
# frozen to zero: the field is non-Lipschitz there and a fixed step would
# chatter instead of settling.
FREEZE_V = 1e-16


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration settings.

    step is the Runge-Kutta step in seconds (<= 1e-2 recommended);
    horizon the integration length; every record_every-th step is stored.
    eps_lambda is shared with the flow's projection case split.
    """

    step: float = 1e-3
    horizon: float = 10.0
    record_every: int = 1
    eps_lambda: float = 1e-9

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.horizon < 0:
            raise ValueError(f"horizon must be nonnegative, got {self.horizon}")
        if self.horizon / self.step > 1e8:
            raise ValueError("horizon/step exceeds 1e8 steps")
        if self.record_every < 1 or int(self.record_every) != self.record_every:
            raise ValueError(f"record_every must be a positive integer, got {self.record_every}")


@dataclass(frozen=True)
class TrajectorySample:
    state: PrimalDualState
    V: float
    decay_residual: float
    active_pattern: np.ndarray  # bool (m,)


@dataclass
class Trajectory:
    """Time-ordered samples plus the configuration that produced them."""

    samples: List[TrajectorySample]
    params: FlowParams
    config: IntegratorConfig
    sched: SlackSchedule
    problem_name: str = "problem"
    source: str = "flow"

    def times(self) -> np.ndarray:
        return np.array([s.state.t for s in self.samples])

    def xs(self) -> np.ndarray:
        return np.array([s.state.x for s in self.samples])

    def lams(self) -> np.ndarray:
        return np.array([s.state.lam for s in self.samples])

    def lyapunov(self) -> np.ndarray:
        return np.array([s.V for s in self.samples])

    def residuals(self) -> np.ndarray:
        return np.array([s.decay_residual for s in self.samples])

    def active_patterns(self) -> np.ndarray:
        return np.array([s.active_pattern for s in self.samples])

    def min_lambda(self) -> float:
        lams = self.lams()
        return float(lams.min()) if lams.size else 0.0


def _effective_params(params: FlowParams, V: float) -> FlowParams:
    if params.kind in ("fixed_time", "finite_time") and V < FREEZE_V:
        # treat grad_x_L as zero in the normalized correction: eps_grad
        # lifted to the norm matching the freeze threshold
        return replace(params, eps_grad=max(params.eps_grad, float(np.sqrt(2 * FREEZE_V))))
    return params


def step_once(
    p: TimeVaryingProblem,
    s: PrimalDualState,
    params: FlowParams,
    sched: SlackSchedule,
    cfg: IntegratorConfig,
) -> PrimalDualState:
    """Advance one Runge-Kutta step; lam is clamped nonnegative afterwards."""
    h = cfg.step
    z0 = np.concatenate([s.x, s.lam])
    n = p.n

    ev0 = flow_eval(p, s, params, sched)
    eff = _effective_params(params, ev0.V)

    def field(z, t):
        return _flow_eval_arrays(p, z[:n], np.maximum(z[n:], 0.0), t, eff, sched).velocity

    k1 = ev0.velocity if eff is params else field(z0, s.t)
    k2 = field(z0 + 0.5 * h * k1, s.t + 0.5 * h)
    k3 = field(z0 + 0.5 * h * k2, s.t + 0.5 * h)
    k4 = field(z0 + h * k3, s.t + h)
    z1 = z0 + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    if not np.all(np.isfinite(z1)):
        raise DivergenceError(f"non-finite state after step at t={s.t}", last_state=s)
    return PrimalDualState(x=z1[:n], lam=np.maximum(z1[n:], 0.0), t=s.t + h)


def _sample(p, s, params, sched) -> TrajectorySample:
    ev = flow_eval(p, s, params, sched)
    eff = _effective_params(params, ev.V)
    if eff is not params:
        ev = flow_eval(p, s, eff, sched)
    resid = decay_residual(ev, params)
    gvals = ev.bundle.g_vals
    return TrajectorySample(
        state=s,
        V=ev.V,
        decay_residual=resid,
        active_pattern=gvals >= -ACTIVE_TOL,
    )


def integrate(
    p: TimeVaryingProblem,
    s0: PrimalDualState,
    params: FlowParams,
    sched: SlackSchedule,
    cfg: IntegratorConfig,
    problem_name: Optional[str] = None,
) -> Trajectory:
    """Integrate the projected flow over [s0.t, s0.t + horizon].

    Samples are recorded at t = s0.t + k * record_every * step (uniform
    spacing; a ragged final remainder is not recorded).  Divergence
    raises DivergenceError carrying the step index and last finite state.
    """
    n_steps = int(round(cfg.horizon / cfg.step)) if cfg.horizon > 0 else 0
    samples = [_sample(p, s0, params, sched)]
    s = s0
    for k in range(n_steps):
        try:
            s = step_once(p, s, params, sched, cfg)
        except DivergenceError as exc:
            err = DivergenceError(
                f"diverged at step {k + 1} (t={s.t + cfg.step}): {exc}",
                last_state=s,
                step_index=k + 1,
            )
            err.partial = samples  # recorded prefix, for partial CSV output
            raise err from exc
        if (k + 1) % cfg.record_every == 0:
            samples.append(_sample(p, s, params, sched))
    return Trajectory(
        samples=samples,
        params=params,
        config=cfg,
        sched=sched,
        problem_name=problem_name or p.name,
    )


def detect_active_switches(traj: Trajectory) -> List[Tuple[float, int, str]]:
    """Times at which a constraint's recorded active flag flips.

    Returns (time, constraint index, "activated" | "deactivated") per flip,
    in time order.
    """
    if not traj.samples:
        raise ValueError("trajectory has no samples")
    events = []
    prev = traj.samples[0].active_pattern
    for sample in traj.samples[1:]:
        cur = sample.active_pattern
        for i in np.flatnonzero(cur != prev):
            events.append((sample.state.t, int(i), "activated" if cur[i] else "deactivated"))
        prev = cur
    return events
