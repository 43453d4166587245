"""Scalar control problems with a lower state floor, plus numerical audits
of the standing regularity and controllability assumptions."""

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import _rk4
from .errors import AssumptionWarning, AuditError, ContractError

ScalarFn = Callable

POSITIVITY_THRESHOLD = 1e-8
CONFIG_KEYS = ("drift_a", "drift_b", "q_running", "q_terminal", "u_min", "u_max", "x0", "horizon", "floor")


def _central_difference(fn, x, *args):
    x = np.asarray(x, dtype=float)
    h = 1e-6 * np.maximum(1.0, np.abs(x))
    return (fn(x + h, *args) - fn(x - h, *args)) / (2.0 * h)


@dataclass(frozen=True)
class ControlProblem:
    """Minimise ``int_0^T f(X, u) dt + Psi(X(T))`` subject to
    ``X' = b(X, u)``, ``X(0) = x0``, ``u(t)`` in ``[u_min, u_max]`` and the
    state floor ``X >= constraint_floor``.

    All callables must accept numpy arrays and broadcast. Optional
    ``*_dx`` fields register analytic state derivatives; when absent,
    central differences with step ``1e-6 * max(1, |x|)`` are used.
    """

    dynamics: ScalarFn
    running_cost: ScalarFn
    terminal_cost: ScalarFn
    control_bounds: tuple
    constraint_floor: float
    initial_state: float
    horizon: float
    dynamics_dx: Optional[ScalarFn] = None
    running_cost_dx: Optional[ScalarFn] = None
    terminal_cost_dx: Optional[ScalarFn] = None
    name: str = ""

    def __post_init__(self):
        lo, hi = self.control_bounds
        if not lo < hi:
            raise ContractError(f"control bounds must satisfy u_min < u_max, got {self.control_bounds}")
        if not self.horizon > 0:
            raise ContractError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "control_bounds", (float(lo), float(hi)))

    @property
    def u_min(self):
        return self.control_bounds[0]

    @property
    def u_max(self):
        return self.control_bounds[1]

    def b_x(self, x, u):
        if self.dynamics_dx is not None:
            return self.dynamics_dx(x, u)
        return _central_difference(self.dynamics, x, u)

    def f_x(self, x, u):
        if self.running_cost_dx is not None:
            return self.running_cost_dx(x, u)
        return _central_difference(self.running_cost, x, u)

    def psi_x(self, x):
        if self.terminal_cost_dx is not None:
            return self.terminal_cost_dx(x)
        return _central_difference(self.terminal_cost, x)

    def clip(self, u):
        return np.clip(u, self.u_min, self.u_max)


@dataclass(frozen=True)
class ConstraintGrid:
    """Times ``0 = t_0 < t_1 < ... < t_n = T`` at which the floor is enforced."""

    times: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.times)
        if len(t) < 2:
            raise ContractError("a constraint grid needs at least t_0 and t_n")
        if t[0] != 0.0:
            raise ContractError(f"constraint grid must start at 0, got {t[0]}")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ContractError("constraint times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, n, horizon):
        if n < 1:
            raise ContractError(f"n must be a positive integer, got {n}")
        t = [horizon * i / n for i in range(n + 1)]
        t[-1] = float(horizon)
        return cls(tuple(t))

    @property
    def n(self):
        return len(self.times) - 1

    @property
    def horizon(self):
        return self.times[-1]

    def interval_of(self, t):
        """1-based index ``i`` with ``t`` in ``[t_{i-1}, t_i)`` (last interval closed)."""
        i = int(np.searchsorted(self.times, t, side="right"))
        return min(max(i, 1), self.n)

    def check_matches(self, problem):
        if abs(self.horizon - problem.horizon) > 1e-12 * max(1.0, problem.horizon):
            raise ContractError(f"grid ends at {self.horizon}, problem horizon is {problem.horizon}")


def affine_problem(drift_a, drift_b, q_running, q_terminal, u_min, u_max, x0, horizon, floor, name="affine"):
    """Drift ``a x + b u``, running cost ``q x^2``, terminal cost ``q_T x^2``."""
    a, bb, q, qt = float(drift_a), float(drift_b), float(q_running), float(q_terminal)
    return ControlProblem(
        dynamics=lambda x, u: a * x + bb * u,
        running_cost=lambda x, u: q * x * x,
        terminal_cost=lambda x: qt * x * x,
        control_bounds=(u_min, u_max),
        constraint_floor=float(floor),
        initial_state=float(x0),
        horizon=float(horizon),
        dynamics_dx=lambda x, u: a + 0.0 * x,
        running_cost_dx=lambda x, u: 2.0 * q * x,
        terminal_cost_dx=lambda x: 2.0 * qt * x,
        name=name,
    )


def load_config(path):
    """Read an affine-family problem from a JSON or YAML file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    missing = [k for k in CONFIG_KEYS if k not in data]
    if missing:
        raise ContractError(f"config {path} is missing keys: {', '.join(missing)}")
    kwargs = {k: data[k] for k in CONFIG_KEYS}
    return affine_problem(name=str(data.get("name", path.stem)), **kwargs)


# audits ---------------------------------------------------------------------


@dataclass(frozen=True)
class AuditReport:
    assumption: str
    estimate: tuple
    satisfied: bool
    detail: dict = field(default_factory=dict)


def _rng(seed):
    return np.random.default_rng(seed)


def reachable_box(problem, lipschitz=None):
    """Crude Gronwall box ``x0 +- exp(cT) R`` for sampling the state."""
    umax = max(abs(problem.u_min), abs(problem.u_max))
    radius = max(abs(problem.initial_state), 1.0) * (1.0 + problem.horizon * umax)
    if lipschitz is None:
        lipschitz = _lipschitz_on(problem, (problem.initial_state - radius, problem.initial_state + radius), 2048, 0)
    scale = math.exp(min(lipschitz * problem.horizon, 50.0)) * radius
    return (problem.initial_state - scale, problem.initial_state + scale)


def _finite_or_raise(values, samples, what):
    bad = ~np.isfinite(values)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise AuditError(tuple(float(s[k]) for s in samples), f"non-finite {what}")


def _lipschitz_on(problem, box, samples, seed):
    rng = _rng(seed)
    x1 = rng.uniform(box[0], box[1], samples)
    x2 = rng.uniform(box[0], box[1], samples)
    u = rng.uniform(problem.u_min, problem.u_max, samples)
    b1 = np.broadcast_to(problem.dynamics(x1, u), x1.shape).astype(float)
    b2 = np.broadcast_to(problem.dynamics(x2, u), x2.shape).astype(float)
    _finite_or_raise(b1, (x1, u), "dynamics value")
    _finite_or_raise(b2, (x2, u), "dynamics value")
    dx = np.abs(x1 - x2)
    ok = dx > 1e-8 * max(1.0, box[1] - box[0])
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(b1 - b2)[ok] / dx[ok]))


def audit_lipschitz(problem, samples=10_000, *, box=None, seed=0):
    """Sampled estimate of the state-Lipschitz constant of the drift."""
    if samples < 2:
        raise ContractError("audit needs at least 2 samples")
    box = box if box is not None else reachable_box(problem)
    return _lipschitz_on(problem, box, samples, seed)


def audit_control_monotonicity(problem, samples=10_000, *, box=None, seed=0, threshold=POSITIVITY_THRESHOLD):
    """Sampled bounds ``(c1, c2)`` on ``|b(x,u1) - b(x,u2)| / |u1 - u2|``.

    Emits an :class:`AssumptionWarning` when ``c1`` falls below
    ``threshold``; the returned report carries the verdict.
    """
    if samples < 2:
        raise ContractError("audit needs at least 2 samples")
    box = box if box is not None else reachable_box(problem)
    rng = _rng(seed)
    x = rng.uniform(box[0], box[1], samples)
    u1 = rng.uniform(problem.u_min, problem.u_max, samples)
    u2 = rng.uniform(problem.u_min, problem.u_max, samples)
    b1 = np.broadcast_to(problem.dynamics(x, u1), x.shape).astype(float)
    b2 = np.broadcast_to(problem.dynamics(x, u2), x.shape).astype(float)
    _finite_or_raise(b1, (x, u1), "dynamics value")
    _finite_or_raise(b2, (x, u2), "dynamics value")
    du = np.abs(u1 - u2)
    ok = du > 1e-8 * (problem.u_max - problem.u_min)
    ratio = np.abs(b1 - b2)[ok] / du[ok]
    c1, c2 = float(ratio.min()), float(ratio.max())
    satisfied = c1 >= threshold
    if not satisfied:
        warnings.warn(f"drift looks insensitive to the control (c1={c1:.3g})", AssumptionWarning, stacklevel=2)
    return AuditReport("control_monotonicity", (c1, c2), satisfied, {"threshold": threshold, "box": box})


def audit_boundary_controllability(problem, t, s, y=None, *, steps=None):
    """Endpoints reached from ``(t, y)`` at time ``s`` under the two extreme
    constant controls; satisfied iff they bracket ``y``."""
    if not 0.0 <= t < s <= problem.horizon:
        raise ContractError(f"need 0 <= t < s <= T, got t={t}, s={s}")
    y = problem.constraint_floor if y is None else float(y)
    steps = steps or max(1, math.ceil(_rk4.STEPS_PER_UNIT * (s - t)))
    times = np.linspace(t, s, steps + 1)
    ends = []
    for u in (problem.u_min, problem.u_max):
        path, bad = _rk4.rk4_scalar(problem.dynamics, y, times, [u] * steps)
        if bad is not None:
            raise AuditError((t, y, u), "non-finite state")
        ends.append(path[-1])
    below, above = min(ends), max(ends)
    satisfied = below <= y <= above
    if not satisfied:
        warnings.warn(f"no extreme control brackets y={y} on [{t}, {s}]", AssumptionWarning, stacklevel=2)
    return AuditReport("boundary_controllability", (below, above), satisfied, {"t": t, "s": s, "y": y})


def audit_drift_energy(problem, samples=2048, *, seed=0):
    """``T * max_u b(0, u)^2`` over sampled ``u``: the bound required of the
    drift at the origin, checkable only because ``U`` is a bounded interval."""
    u = np.linspace(problem.u_min, problem.u_max, samples)
    b0 = np.broadcast_to(problem.dynamics(np.zeros_like(u), u), u.shape).astype(float)
    _finite_or_raise(b0, (u,), "dynamics value")
    return float(problem.horizon * np.max(b0**2))


def run_audits(problem, samples=10_000, seed=0):
    """All audits at once, as a JSON-ready dict."""
    box = reachable_box(problem)
    lip = audit_lipschitz(problem, samples, box=box, seed=seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AssumptionWarning)
        mono = audit_control_monotonicity(problem, samples, box=box, seed=seed)
        t_mid = 0.5 * problem.horizon
        ctrl = audit_boundary_controllability(problem, t_mid, min(problem.horizon, t_mid + 0.1 * problem.horizon))
    return {
        "problem": problem.name,
        "box": list(box),
        "lipschitz": lip,
        "drift_energy": audit_drift_energy(problem, seed=seed),
        "control_monotonicity": {"c1": mono.estimate[0], "c2": mono.estimate[1], "satisfied": mono.satisfied},
        "boundary_controllability": {
            "t": ctrl.detail["t"],
            "s": ctrl.detail["s"],
            "reach_below": ctrl.estimate[0],
            "reach_above": ctrl.estimate[1],
            "satisfied": ctrl.satisfied,
        },
        "warnings": [str(w.message) for w in caught],
    }
