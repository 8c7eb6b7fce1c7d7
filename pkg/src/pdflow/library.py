"""Built-in scenarios and the moving-disk scenario format.

Three scenarios ship with the package:

``quad2d``
    A two-dimensional quadratic whose minimizer rides a sinusoid, with a
    single drifting linear constraint.  Small enough that every quantity
    can be checked by hand.

``disks5``
    Squared-distance rendezvous with five convex sets: four disks moving
    on linear / spiral / circular paths and one static lens (intersection
    of two disks).  Twelve primal variables, six constraints.

``disks3``
    Three disks whose geometry alternates between a triangle and a line,
    driving one constraint through inactive/active switches.  Eight
    primal variables, three constraints.

The rendezvous problems minimize sum_i ||X - X_i||^2 over the stacked
vector (X, X_1, .., X_q) with X_i confined to the i-th set.  Their joint
objective Hessian is constant, positive semidefinite, and singular along
uniform translations; boundedness of the constraint sets restores the
uniqueness of the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .flows import FlowParams, settling_time_bound
from .integrate import IntegratorConfig
from .problem import TimeVaryingProblem
from .saddle import SlackSchedule

__all__ = [
    "DiskSpec",
    "SetSpec",
    "ScenarioSpec",
    "Scenario",
    "quad2d_problem",
    "unconstrained_quad_problem",
    "rendezvous_problem",
    "disks5_spec",
    "disks3_spec",
    "disks5_scenario",
    "disks3_scenario",
    "quad2d_scenario",
    "parse_scenario",
    "list_problems",
    "get_scenario",
]


# -- the hand-checkable quadratic scenario -------------------------------------


def quad2d_problem() -> TimeVaryingProblem:
    """min 0.5 (x1 + sin t)^2 + 1.5 (x2 + cos t)^2  s.t.  x2 - x1 - cos t <= 0."""

    def f(x, t):
        return 0.5 * (x[0] + math.sin(t)) ** 2 + 1.5 * (x[1] + math.cos(t)) ** 2

    def grad_x_f(x, t):
        return np.array([x[0] + math.sin(t), 3.0 * (x[1] + math.cos(t))])

    def hess_xx_f(x, t):
        return np.array([[1.0, 0.0], [0.0, 3.0]])

    def grad_xt_f(x, t):
        return np.array([math.cos(t), -3.0 * math.sin(t)])

    def g(x, t):
        return np.array([x[1] - x[0] - math.cos(t)])

    def grad_x_g(x, t):
        return np.array([[-1.0], [1.0]])

    def grad_t_g(x, t):
        return np.array([math.sin(t)])

    def grad_xt_g(x, t):
        return np.zeros((2, 1))

    def hess_xx_g(x, t):
        return np.zeros((1, 2, 2))

    return TimeVaryingProblem(
        n=2,
        m=1,
        f=f,
        grad_x_f=grad_x_f,
        hess_xx_f=hess_xx_f,
        grad_xt_f=grad_xt_f,
        g=g,
        grad_x_g=grad_x_g,
        grad_t_g=grad_t_g,
        grad_xt_g=grad_xt_g,
        hess_xx_g=hess_xx_g,
        mu=1.0,
        name="quad2d",
        rate_bound=lambda t: np.array([1.0]),
        lipschitz_grad=3.0,
        hess_bound=3.0,
        derivative_modes={s: "analytic" for s in (
            "grad_x_f", "hess_xx_f", "grad_xt_f", "grad_x_g", "grad_t_g", "grad_xt_g", "hess_xx_g")},
    )


def unconstrained_quad_problem() -> TimeVaryingProblem:
    """Constraint-free drifting quadratic (m = 0), for degenerate-path checks."""

    def f(x, t):
        d = x - np.array([math.sin(t), -math.cos(t)])
        return 0.5 * float(d @ d)

    def grad_x_f(x, t):
        return x - np.array([math.sin(t), -math.cos(t)])

    return TimeVaryingProblem(
        n=2,
        m=0,
        f=f,
        grad_x_f=grad_x_f,
        hess_xx_f=lambda x, t: np.eye(2),
        grad_xt_f=lambda x, t: np.array([-math.cos(t), -math.sin(t)]),
        g=lambda x, t: np.zeros(0),
        grad_x_g=lambda x, t: np.zeros((2, 0)),
        grad_t_g=lambda x, t: np.zeros(0),
        grad_xt_g=lambda x, t: np.zeros((2, 0)),
        hess_xx_g=lambda x, t: np.zeros((0, 2, 2)),
        mu=1.0,
        name="freequad",
    )


# -- moving-disk scenario declarations ------------------------------------------


@dataclass(frozen=True)
class DiskSpec:
    """One disk constraint ||center(t) - X_i||^2 <= radius(t)^2.

    The center follows anchor + (path(t) - path(0)), so every disk starts
    at its declared anchor regardless of the path parametrization.  Path
    kinds and their parameters:

    static            fixed center
    linear            velocity (vx, vy)
    spiral            (rate * t * cos t, rate * t * sin t)
    circular          (amp * sin(omega t), amp * (cos(omega t) - 1))
    sinusoid-radius   static center, radius + amp * sin(omega t)
    """

    anchor: Tuple[float, float]
    radius: float
    path: str = "static"
    vx: float = 0.0
    vy: float = 0.0
    rate: float = 0.0
    amp: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.path not in ("static", "linear", "spiral", "circular", "sinusoid-radius"):
            raise ValueError(f"unknown path kind {self.path!r}")

    def center(self, t: float) -> np.ndarray:
        ax, ay = self.anchor
        if self.path == "linear":
            return np.array([ax + self.vx * t, ay + self.vy * t])
        if self.path == "spiral":
            return np.array([ax + self.rate * t * math.cos(t), ay + self.rate * t * math.sin(t)])
        if self.path == "circular":
            return np.array([
                ax + self.amp * math.sin(self.omega * t),
                ay + self.amp * (math.cos(self.omega * t) - 1.0),
            ])
        return np.array([ax, ay])

    def center_dot(self, t: float) -> np.ndarray:
        if self.path == "linear":
            return np.array([self.vx, self.vy])
        if self.path == "spiral":
            c, s = math.cos(t), math.sin(t)
            return np.array([self.rate * (c - t * s), self.rate * (s + t * c)])
        if self.path == "circular":
            w = self.omega
            return np.array([self.amp * w * math.cos(w * t), -self.amp * w * math.sin(w * t)])
        return np.zeros(2)

    def radius_at(self, t: float) -> float:
        if self.path == "sinusoid-radius":
            return self.radius + self.amp * math.sin(self.omega * t)
        return self.radius

    def radius_dot(self, t: float) -> float:
        if self.path == "sinusoid-radius":
            return self.amp * self.omega * math.cos(self.omega * t)
        return 0.0


@dataclass(frozen=True)
class SetSpec:
    """A convex set given as the intersection of one or more disks."""

    disks: Tuple[DiskSpec, ...]

    def __post_init__(self):
        if not self.disks:
            raise ValueError("a set needs at least one disk")


@dataclass(frozen=True)
class ScenarioSpec:
    """Moving-set geometry of one rendezvous scenario."""

    sets: Tuple[SetSpec, ...]
    description: str = ""
    horizon: float = 50.0

    def __post_init__(self):
        if not self.sets:
            raise ValueError("scenario needs at least one set")
        for ss in self.sets:
            for d in ss.disks:
                for t in np.linspace(0.0, self.horizon, 101):
                    if d.radius_at(float(t)) <= 0:
                        raise ValueError(f"disk radius nonpositive at t={t}")

    @property
    def q(self) -> int:
        return len(self.sets)

    @property
    def m(self) -> int:
        return sum(len(s.disks) for s in self.sets)


def rendezvous_problem(spec: ScenarioSpec, name: str = "rendezvous") -> TimeVaryingProblem:
    """Stacked squared-distance rendezvous problem for a disk scenario.

    Decision vector z = (X, X_1, ..., X_q) in R^{2(q+1)}; objective
    sum_i ||X - X_i||^2; one constraint ||C(t) - X_i||^2 - r(t)^2 <= 0
    per disk of set i.
    """
    q = spec.q
    m = spec.m
    n = 2 * (q + 1)

    # constraint j -> (set index, disk)
    owners: List[Tuple[int, DiskSpec]] = []
    for si, ss in enumerate(spec.sets):
        for d in ss.disks:
            owners.append((si, d))

    # constant objective Hessian: X block couples to every X_i block
    K = np.zeros((n, n))
    K[0:2, 0:2] = 2.0 * q * np.eye(2)
    for i in range(1, q + 1):
        K[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = 2.0 * np.eye(2)
        K[0:2, 2 * i : 2 * i + 2] = -2.0 * np.eye(2)
        K[2 * i : 2 * i + 2, 0:2] = -2.0 * np.eye(2)
    K.setflags(write=False)

    hess_g = np.zeros((m, n, n))
    for j, (si, _) in enumerate(owners):
        blk = slice(2 * (si + 1), 2 * (si + 1) + 2)
        hess_g[j, blk, blk] = 2.0 * np.eye(2)
    hess_g.setflags(write=False)

    zeros_n = np.zeros(n)
    zeros_n.setflags(write=False)

    # (m, 2) flat indices of the X_i block owning each constraint
    own_idx = np.array([[2 * (si + 1), 2 * (si + 1) + 1] for si, _ in owners])
    cols = np.arange(m)

    # the solvers evaluate thousands of times at a handful of distinct t
    # (oracle iterations, Runge-Kutta stages); memoize the geometry per t
    geo_cache: dict = {}

    def _geometry(t: float):
        hit = geo_cache.get(t)
        if hit is None:
            C = np.array([d.center(t) for _, d in owners])
            Cdot = np.array([d.center_dot(t) for _, d in owners])
            r = np.array([d.radius_at(t) for _, d in owners])
            rdot = np.array([d.radius_dot(t) for _, d in owners])
            if len(geo_cache) > 16:
                geo_cache.clear()
            hit = geo_cache[t] = (C, Cdot, r, rdot)
        return hit

    def f(z, t):
        zz = z.reshape(q + 1, 2)
        d = zz[0] - zz[1:]
        return float((d * d).sum())

    def grad_x_f(z, t):
        zz = z.reshape(q + 1, 2)
        d = zz[0] - zz[1:]
        out = np.empty((q + 1, 2))
        out[0] = 2.0 * d.sum(axis=0)
        out[1:] = -2.0 * d
        return out.ravel()

    def g(z, t):
        C, _, r, _ = _geometry(t)
        dc = C - z[own_idx]
        return (dc * dc).sum(axis=1) - r * r

    def grad_x_g(z, t):
        C, _, _, _ = _geometry(t)
        val = 2.0 * (z[own_idx] - C)  # (m, 2)
        out = np.zeros((n, m))
        out[own_idx[:, 0], cols] = val[:, 0]
        out[own_idx[:, 1], cols] = val[:, 1]
        return out

    def grad_t_g(z, t):
        C, Cdot, r, rdot = _geometry(t)
        dc = C - z[own_idx]
        return 2.0 * (dc * Cdot).sum(axis=1) - 2.0 * r * rdot

    def grad_xt_g(z, t):
        _, Cdot, _, _ = _geometry(t)
        out = np.zeros((n, m))
        out[own_idx[:, 0], cols] = -2.0 * Cdot[:, 0]
        out[own_idx[:, 1], cols] = -2.0 * Cdot[:, 1]
        return out

    return TimeVaryingProblem(
        n=n,
        m=m,
        f=f,
        grad_x_f=grad_x_f,
        hess_xx_f=lambda z, t: K,
        grad_xt_f=lambda z, t: zeros_n,
        g=g,
        grad_x_g=grad_x_g,
        grad_t_g=grad_t_g,
        grad_xt_g=grad_xt_g,
        hess_xx_g=lambda z, t: hess_g,
        mu=0.0,  # singular along uniform translations; sets restore uniqueness
        name=name,
        derivative_modes={s: "analytic" for s in (
            "grad_x_f", "hess_xx_f", "grad_xt_f", "grad_x_g", "grad_t_g", "grad_xt_g", "hess_xx_g")},
    )


def disks5_spec() -> ScenarioSpec:
    """Four moving disks plus a static two-disk lens, 50 s horizon."""
    return ScenarioSpec(
        sets=(
            SetSpec((DiskSpec(anchor=(-12.0, 12.0), radius=3.0, path="linear", vx=0.4, vy=-0.5),)),
            SetSpec((DiskSpec(anchor=(5.0, 7.0), radius=2.0, path="spiral", rate=0.2),)),
            SetSpec((DiskSpec(anchor=(7.0, -3.0), radius=1.5, path="linear", vx=-0.8, vy=-2.0 / 15.0),)),
            SetSpec((DiskSpec(anchor=(-9.0, -13.0), radius=3.0, path="circular", amp=6.0, omega=math.pi / 25.0),)),
            SetSpec((
                DiskSpec(anchor=(-25.0, 10.0), radius=6.0, path="static"),
                DiskSpec(anchor=(-25.0, 15.0), radius=5.0, path="static"),
            )),
        ),
        description="four moving disks and a static lens",
        horizon=50.0,
    )


def disks3_spec() -> ScenarioSpec:
    """Three disks drifting from a triangle through a line and back, 70 s."""
    return ScenarioSpec(
        sets=(
            SetSpec((DiskSpec(anchor=(-11.0, -3.5), radius=2.5, path="linear", vx=0.0, vy=0.25),)),
            SetSpec((DiskSpec(anchor=(0.0, 0.0), radius=2.0, path="sinusoid-radius", amp=0.1, omega=0.03 * math.pi),)),
            SetSpec((DiskSpec(anchor=(11.0, -4.0), radius=2.5, path="linear", vx=0.0, vy=0.25),)),
        ),
        description="triangle-to-line disk alignment",
        horizon=70.0,
    )


# -- packaged scenarios ----------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """A problem with its recommended flow, slack and integration settings."""

    problem: TimeVaryingProblem
    flow_params: FlowParams
    slack: SlackSchedule
    config: IntegratorConfig
    x0: Optional[np.ndarray] = None
    lam0: Optional[np.ndarray] = None
    description: str = ""
    asymptotic_slack: Optional[SlackSchedule] = None

    def params_for(self, kind: str) -> FlowParams:
        """Recommended parameters re-targeted at another flow kind."""
        if kind == self.flow_params.kind:
            return self.flow_params
        if kind == "finite_time":
            return replace(self.flow_params, kind=kind, c2=0.0)
        return replace(self.flow_params, kind=kind)

    def slack_for(self, kind: str) -> SlackSchedule:
        if kind == "asymptotic" and self.asymptotic_slack is not None:
            return self.asymptotic_slack
        return self.slack


def quad2d_scenario() -> Scenario:
    """The hand-checkable quadratic with its reference settings."""
    params = FlowParams(kind="asymptotic", alpha=2.0, c1=1.0, c2=1.0, gamma1=0.2, gamma2=-2.0,
                        eps_lambda=1e-6)
    slack = SlackSchedule(kind="asymptotic", delta=0.01)
    return Scenario(
        problem=quad2d_problem(),
        flow_params=params,
        slack=slack,
        config=IntegratorConfig(step=1e-3, horizon=20.0, record_every=100),
        x0=np.array([2.0, 1.0]),
        lam0=np.array([4.0]),
        description="2-D time-varying quadratic, one drifting linear constraint",
        asymptotic_slack=slack,
    )


def disks5_scenario() -> Scenario:
    """Five-set rendezvous with its recommended fixed-time settings."""
    params = FlowParams(kind="fixed_time", alpha=2.0, c1=1.0, c2=1.0, gamma1=0.2, gamma2=-2.0,
                        eps_lambda=1e-6)
    t_max = settling_time_bound(params)
    return Scenario(
        problem=rendezvous_problem(disks5_spec(), name="disks5"),
        flow_params=params,
        slack=SlackSchedule(kind="fixed_time", rho=0.001, k=1.0, t_max=t_max),
        config=IntegratorConfig(step=2e-3, horizon=50.0, record_every=50),
        description="five-set squared-distance rendezvous",
        asymptotic_slack=SlackSchedule(kind="asymptotic", delta=0.1),
    )


def disks3_scenario() -> Scenario:
    """Three-disk alignment with its recommended fixed-time settings."""
    params = FlowParams(kind="fixed_time", alpha=2.0, c1=1.0, c2=1.0, gamma1=0.1, gamma2=-2.0,
                        eps_lambda=1e-6)
    t_max = settling_time_bound(params)
    return Scenario(
        problem=rendezvous_problem(disks3_spec(), name="disks3"),
        flow_params=params,
        slack=SlackSchedule(kind="fixed_time", rho=0.1, k=0.001, t_max=t_max),
        config=IntegratorConfig(step=2e-3, horizon=70.0, record_every=50),
        description="three-disk alignment with a dual activity switch",
        asymptotic_slack=SlackSchedule(kind="asymptotic", delta=0.1),
    )


def freequad_scenario() -> Scenario:
    params = FlowParams(kind="asymptotic", alpha=2.0)
    return Scenario(
        problem=unconstrained_quad_problem(),
        flow_params=params,
        slack=SlackSchedule(kind="none"),
        config=IntegratorConfig(step=1e-3, horizon=10.0, record_every=100),
        x0=np.array([1.0, 1.0]),
        lam0=np.zeros(0),
        description="unconstrained drifting quadratic (m = 0)",
    )


_REGISTRY: dict = {
    "quad2d": quad2d_scenario,
    "disks5": disks5_scenario,
    "disks3": disks3_scenario,
    "freequad": freequad_scenario,
}

# The scenarios swept by cross-cutting diagnostics (freequad is a
# degenerate-path fixture, not a benchmark).
BENCHMARK_NAMES = ("quad2d", "disks5", "disks3")


def list_problems() -> List[Tuple[str, str]]:
    """(name, description) of every built-in scenario."""
    return [(name, fn().description) for name, fn in _REGISTRY.items()]


def get_scenario(name: str) -> Scenario:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; built-ins: {', '.join(_REGISTRY)}"
        ) from None


# -- plain-text scenario format ---------------------------------------------------

_PATH_KEYS = {
    "static": (),
    "linear": ("vx", "vy"),
    "spiral": ("rate",),
    "circular": ("amp", "omega"),
    "sinusoid-radius": ("amp", "omega"),
}


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse the declarative moving-disk format.

    Line-oriented: '#' starts a comment, 'set' opens a new constraint
    set, 'disk anchor=X,Y radius=R path=KIND [key=value ...]' adds a disk
    to the current set, and 'horizon=T' / 'description=...' set scenario
    attributes.  See README for the grammar and an example.
    """
    sets: List[List[DiskSpec]] = []
    horizon = 50.0
    description = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "set":
            sets.append([])
            continue
        if line.startswith("horizon="):
            horizon = float(line.split("=", 1)[1])
            continue
        if line.startswith("description="):
            description = line.split("=", 1)[1].strip()
            continue
        if line.startswith("disk"):
            if not sets:
                raise ValueError(f"line {lineno}: 'disk' before any 'set'")
            fields = {}
            for token in line.split()[1:]:
                if "=" not in token:
                    raise ValueError(f"line {lineno}: expected key=value, got {token!r}")
                key, val = token.split("=", 1)
                fields[key] = val
            try:
                ax, ay = (float(v) for v in fields.pop("anchor").split(","))
                radius = float(fields.pop("radius"))
                path = fields.pop("path", "static")
            except KeyError as exc:
                raise ValueError(f"line {lineno}: missing disk field {exc}") from None
            if path not in _PATH_KEYS:
                raise ValueError(f"line {lineno}: unknown path kind {path!r}")
            extra = {k: float(v) for k, v in fields.items()}
            unknown = set(extra) - set(_PATH_KEYS[path])
            if unknown:
                raise ValueError(f"line {lineno}: keys {sorted(unknown)} not valid for path {path!r}")
            sets[-1].append(DiskSpec(anchor=(ax, ay), radius=radius, path=path, **extra))
            continue
        raise ValueError(f"line {lineno}: cannot parse {raw!r}")
    return ScenarioSpec(
        sets=tuple(SetSpec(tuple(disks)) for disks in sets),
        description=description,
        horizon=horizon,
    )
