"""Forward integration of the controlled ODE, cost quadrature, spike
variations and the first-order variational equation."""

import csv
from dataclasses import dataclass

import numpy as np

from . import _rk4
from .errors import ContractError, IntegrationDiverged

_TIME_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PiecewiseConstantControl:
    """Control equal to ``values[k]`` on ``[breakpoints[k], breakpoints[k+1])``.

    A control with a single breakpoint and no values is the empty control
    on a zero-length interval.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float).ravel()
        vals = np.array(self.values, dtype=float).ravel()
        if bp.size != vals.size + 1:
            raise ContractError(f"{bp.size} breakpoints cannot carry {vals.size} values")
        if np.any(np.diff(bp) <= 0):
            raise ContractError("control breakpoints must be strictly increasing")
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(bp)):
            raise ContractError("control breakpoints and values must be finite")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value, start, end):
        if end <= start:
            return cls([start], [])
        return cls([start, end], [value])

    @classmethod
    def from_cells(cls, values, start, end):
        values = np.asarray(values, dtype=float)
        bp = np.linspace(start, end, values.size + 1)
        return cls(bp, values)

    @classmethod
    def concatenate(cls, pieces):
        pieces = [p for p in pieces if p.values.size]
        if not pieces:
            raise ContractError("nothing to concatenate")
        bps, vals = [pieces[0].breakpoints[:1]], []
        for prev, nxt in zip(pieces, pieces[1:]):
            if abs(prev.end - nxt.start) > _TIME_TOL * max(1.0, abs(prev.end)):
                raise ContractError(f"pieces are not contiguous at {prev.end} / {nxt.start}")
        for p in pieces:
            bps.append(p.breakpoints[1:])
            vals.append(p.values)
        return cls(np.concatenate(bps), np.concatenate(vals)).canonical()

    @property
    def start(self):
        return float(self.breakpoints[0])

    @property
    def end(self):
        return float(self.breakpoints[-1])

    @property
    def is_empty(self):
        return self.values.size == 0

    def __call__(self, t):
        if self.is_empty:
            raise ContractError("the empty control has no values")
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        idx = np.clip(idx, 0, self.values.size - 1)
        return self.values[idx]

    def canonical(self):
        """Same function with adjacent equal pieces merged."""
        if self.values.size <= 1:
            return self
        keep = np.concatenate([[True], self.values[1:] != self.values[:-1]])
        bp = np.concatenate([self.breakpoints[:-1][keep], self.breakpoints[-1:]])
        return PiecewiseConstantControl(bp, self.values[keep])

    def restrict(self, a, b):
        """The control on ``[a, b]``."""
        if b <= a:
            return PiecewiseConstantControl([a], [])
        inner = self.breakpoints[(self.breakpoints > a) & (self.breakpoints < b)]
        bp = np.concatenate([[a], inner, [b]])
        return PiecewiseConstantControl(bp, self(0.5 * (bp[:-1] + bp[1:])))

    def override(self, a, b, value):
        """Copy with ``value`` on ``[a, b)``."""
        if b <= a:
            return self
        parts = []
        if a > self.start:
            parts.append(self.restrict(self.start, a))
        parts.append(PiecewiseConstantControl([a, b], [value]))
        if b < self.end:
            parts.append(self.restrict(b, self.end))
        return PiecewiseConstantControl.concatenate(parts)

    def _merged_difference(self, other):
        bp = np.union1d(self.breakpoints, other.breakpoints)
        bp = bp[(bp >= max(self.start, other.start)) & (bp <= min(self.end, other.end))]
        mid = 0.5 * (bp[:-1] + bp[1:])
        return np.diff(bp), self(mid) - other(mid)

    def l1_distance(self, other):
        w, d = self._merged_difference(other)
        return float(np.sum(w * np.abs(d)))

    def l2_distance(self, other):
        w, d = self._merged_difference(other)
        return float(np.sqrt(np.sum(w * d * d)))

    def allclose(self, other, atol=1e-12):
        a, b = self.canonical(), other.canonical()
        return (
            a.breakpoints.size == b.breakpoints.size
            and np.allclose(a.breakpoints, b.breakpoints, atol=atol, rtol=0)
            and np.allclose(a.values, b.values, atol=atol, rtol=0)
        )

    def check_admissible(self, problem):
        T = problem.horizon
        if abs(self.start) > _TIME_TOL * max(1.0, T) or abs(self.end - T) > _TIME_TOL * max(1.0, T):
            raise ContractError(f"control covers [{self.start}, {self.end}], horizon is [0, {T}]")
        slack = 1e-12 * max(1.0, abs(problem.u_min), abs(problem.u_max))
        if np.any(self.values < problem.u_min - slack) or np.any(self.values > problem.u_max + slack):
            raise ContractError("control values leave the control set")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States on a time grid; ``dt`` is the nominal uniform step.

    The grid is the uniform grid refined by any control breakpoints or
    requested knots, so individual steps may be shorter than ``dt``.
    """

    times: np.ndarray
    states: np.ndarray
    dt: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if t.shape != x.shape:
            raise ContractError("times and states must have equal length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    def index_of(self, t):
        k = int(np.searchsorted(self.times, t))
        span = max(1.0, self.times[-1] - self.times[0])
        near = [j for j in (k - 1, k, k + 1) if 0 <= j < self.times.size]
        j = min(near, key=lambda j: abs(self.times[j] - t))
        if abs(self.times[j] - t) <= 1e-9 * span:
            return j
        raise ContractError(f"time {t} is not a node of the trajectory grid")

    def at(self, t):
        return float(self.states[self.index_of(t)])

    def interpolate(self, t):
        return np.interp(t, self.times, self.states)

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.states)))


@dataclass(frozen=True, eq=False)
class VariationalPath:
    """First-order state response to a spike on ``window``; ``base_states``
    holds the unperturbed path on the same grid."""

    times: np.ndarray
    values: np.ndarray
    window: tuple
    base_states: np.ndarray


def build_grid(horizon, steps, *knots, start=0.0):
    base = np.linspace(start, horizon, steps + 1)
    return _rk4.merge_grid(base, *knots)


def step_controls(control, times):
    times = np.asarray(times)
    return control(0.5 * (times[:-1] + times[1:]))


def integrate_on_grid(problem, control, times, x0=None):
    """RK4 on an explicit grid; raises :class:`IntegrationDiverged`."""
    uvals = step_controls(control, times)
    x0 = problem.initial_state if x0 is None else x0
    states, bad = _rk4.rk4_scalar(problem.dynamics, x0, times, uvals.tolist())
    if bad is not None:
        raise IntegrationDiverged(times[bad])
    return np.asarray(states)


def integrate_forward(problem, control, steps=None, *, knots=None):
    """Integrate ``X' = b(X, u)`` from ``x0`` over ``[0, T]``.

    Parameters
    ----------
    steps : int, optional
        Uniform steps on ``[0, T]``; defaults to ``10**4`` per unit time.
        Control breakpoints and ``knots`` are inserted as extra nodes.
    """
    control.check_admissible(problem)
    steps = steps or _rk4.default_steps(problem.horizon)
    if steps < 1:
        raise ContractError("steps must be >= 1")
    times = build_grid(problem.horizon, steps, control.breakpoints, knots)
    states = integrate_on_grid(problem, control, times)
    return Trajectory(times, states, problem.horizon / steps)


def integrate_segment(problem, control, x_start, steps_per_unit=_rk4.STEPS_PER_UNIT):
    """Integrate over ``[control.start, control.end]`` from ``x_start``."""
    if control.is_empty:
        return Trajectory(np.array([control.start]), np.array([float(x_start)]), 0.0)
    length = control.end - control.start
    steps = max(1, int(np.ceil(steps_per_unit * length)))
    times = build_grid(control.end, steps, control.breakpoints, start=control.start)
    states = integrate_on_grid(problem, control, times, x0=x_start)
    return Trajectory(times, states, length / steps)


def _check_grid_covers(trajectory, control, horizon):
    tol = 1e-9 * max(1.0, horizon)
    t = trajectory.times
    if abs(t[0]) > tol or abs(t[-1] - horizon) > tol:
        raise ContractError("trajectory grid does not span [0, T]")
    bp = control.breakpoints
    idx = np.clip(np.searchsorted(t, bp), 1, t.size - 1)
    gap = np.minimum(np.abs(t[idx] - bp), np.abs(t[idx - 1] - bp))
    if np.any(gap > tol):
        raise ContractError("a control breakpoint falls strictly inside an integration step")


def running_cost_integral(problem, times, states, uvals):
    f0 = np.broadcast_to(problem.running_cost(states[:-1], uvals), uvals.shape)
    f1 = np.broadcast_to(problem.running_cost(states[1:], uvals), uvals.shape)
    return float(np.sum(0.5 * np.diff(times) * (f0 + f1)))


def evaluate_cost(problem, trajectory, control):
    """Trapezoid quadrature of the running cost plus the terminal cost."""
    _check_grid_covers(trajectory, control, problem.horizon)
    uvals = step_controls(control, trajectory.times)
    integral = running_cost_integral(problem, trajectory.times, trajectory.states, uvals)
    return integral + float(problem.terminal_cost(trajectory.states[-1]))


def simulate(problem, control, steps=None, *, knots=None):
    """Convenience: ``(trajectory, cost)``."""
    traj = integrate_forward(problem, control, steps, knots=knots)
    return traj, evaluate_cost(problem, traj, control)


def spike_variation(base, v, epsilon, replacement, *, grid=None, bounds=None, min_width=None):
    """Replace ``base`` by ``replacement`` on ``[v, v + epsilon)``.

    With a constraint ``grid`` the window must lie inside a single
    ``[t_{i-1}, t_i)``. Windows narrower than ``min_width`` (default
    ``1e-12 * T``) are treated as empty.
    """
    if not epsilon > 0:
        raise ContractError("epsilon must be positive")
    min_width = 1e-12 * max(1.0, base.end) if min_width is None else min_width
    if epsilon <= min_width:
        return base
    a, b = float(v), float(v) + float(epsilon)
    if a < base.start or b > base.end:
        raise ContractError(f"spike window [{a}, {b}) leaves the control horizon")
    if bounds is not None and not bounds[0] <= replacement <= bounds[1]:
        raise ContractError(f"replacement {replacement} is outside the control set")
    if grid is not None:
        i = grid.interval_of(a)
        lo, hi = grid.times[i - 1], grid.times[i]
        if not (lo <= a and b <= hi + _TIME_TOL):
            raise ContractError(f"spike window [{a}, {b}) crosses a constraint time")
    return base.override(a, b, replacement)


def _spike_window(base, spike):
    bp = np.union1d(base.breakpoints, spike.breakpoints)
    mid = 0.5 * (bp[:-1] + bp[1:])
    differs = np.flatnonzero(base(mid) != spike(mid))
    if differs.size == 0:
        return None
    return float(bp[differs[0]]), float(bp[differs[-1] + 1])


def linear_rk4_coefficients(problem, times, states, uvals, forcing=None):
    """Stage coefficients for ``y' = a(t) y + g(t)`` along a base path.

    Returns ``(a0, am, a1)`` and, when ``forcing(x, u_step)`` is given,
    ``(g0, gm, g1)``, evaluated at step starts, midpoints and ends.
    """
    xm = _rk4.hermite_midpoints(problem.dynamics, times, states, uvals)
    x0, x1 = states[:-1], states[1:]
    shape = uvals.shape
    a = tuple(np.broadcast_to(problem.b_x(x, uvals), shape).astype(float) for x in (x0, xm, x1))
    if forcing is None:
        return a, None
    g = tuple(np.broadcast_to(forcing(x, uvals), shape).astype(float) for x in (x0, xm, x1))
    return a, g


def linear_rk4_forward(times, y0, a, g):
    a0, am, a1 = (arr.tolist() for arr in a)
    g0, gm, g1 = (arr.tolist() for arr in g)
    hs = np.diff(times).tolist()
    y = float(y0)
    out = [y]
    for k, h in enumerate(hs):
        k1 = a0[k] * y + g0[k]
        k2 = am[k] * (y + 0.5 * h * k1) + gm[k]
        k3 = am[k] * (y + 0.5 * h * k2) + gm[k]
        k4 = a1[k] * (y + h * k3) + g1[k]
        y = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        out.append(y)
    return np.asarray(out)


def integrate_variational(problem, base_pair, spike, steps=None):
    """Solve ``y' = b_x(Xbar, ubar) y + b(Xbar, u_eps) - b(Xbar, ubar)``, ``y(0) = 0``."""
    base, _ = base_pair
    base.check_admissible(problem)
    spike.check_admissible(problem)
    steps = steps or _rk4.default_steps(problem.horizon)
    times = build_grid(problem.horizon, steps, base.breakpoints, spike.breakpoints)
    xbar = integrate_on_grid(problem, base, times)
    window = _spike_window(base, spike)
    if window is None:
        return VariationalPath(times, np.zeros_like(times), (None, None), xbar)
    ubar = step_controls(base, times)
    ueps = step_controls(spike, times)
    b = problem.dynamics

    def forcing(x, u):
        return b(x, ueps) - b(x, u)

    a, g = linear_rk4_coefficients(problem, times, xbar, ubar, forcing)
    y = linear_rk4_forward(times, 0.0, a, g)
    if not np.all(np.isfinite(y)):
        raise IntegrationDiverged(times[int(np.argmax(~np.isfinite(y)))])
    return VariationalPath(times, y, window, xbar)


@dataclass(frozen=True)
class ExpansionRow:
    epsilon: float
    remainder: float
    ratio: float
    cost_residual: float


def check_expansion(problem, base_pair, v, replacement, epsilons, steps=None, *, grid=None):
    """Remainders of the first-order state and cost expansions for a
    shrinking family of spikes ``[v, v + eps)``.

    ``remainder`` is ``max |X_eps - Xbar - y|``; ``ratio`` divides it by
    ``eps``; ``cost_residual`` is the cost-expansion error over ``eps``.
    """
    eps = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ContractError("epsilons must be strictly decreasing")
    base, _ = base_pair
    rows = []
    for e in eps:
        spike = spike_variation(base, v, e, replacement, grid=grid, bounds=problem.control_bounds)
        var = integrate_variational(problem, base_pair, spike, steps)
        t = var.times
        xbar = var.base_states
        xeps = integrate_on_grid(problem, spike, t)
        remainder = float(np.max(np.abs(xeps - xbar - var.values)))
        ubar = step_controls(base, t)
        ueps = step_controls(spike, t)
        j_bar = running_cost_integral(problem, t, xbar, ubar) + float(problem.terminal_cost(xbar[-1]))
        j_eps = running_cost_integral(problem, t, xeps, ueps) + float(problem.terminal_cost(xeps[-1]))
        f, f_x, y = problem.running_cost, problem.f_x, var.values
        shape = ubar.shape

        def integrand(x, yy):
            return (
                np.broadcast_to(f_x(x, ubar), shape) * yy
                + np.broadcast_to(f(x, ueps), shape)
                - np.broadcast_to(f(x, ubar), shape)
            )

        lhs = integrand(xbar[:-1], y[:-1])
        rhs = integrand(xbar[1:], y[1:])
        first = float(np.sum(0.5 * np.diff(t) * (lhs + rhs))) + float(problem.psi_x(xbar[-1])) * y[-1]
        rows.append(ExpansionRow(e, remainder, remainder / e, abs(j_eps - j_bar - first) / e))
    return rows


# exports ----------------------------------------------------------------------


def write_trajectory_csv(path, trajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x"])
        for t, x in zip(trajectory.times, trajectory.states):
            w.writerow([repr(float(t)), repr(float(x))])


def write_control_csv(path, control):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_start", "t_end", "u"])
        for a, b, u in zip(control.breakpoints[:-1], control.breakpoints[1:], control.values):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(u))])


def read_control_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ContractError(f"{path} holds no control pieces")
    bp = [float(rows[0]["t_start"])] + [float(r["t_end"]) for r in rows]
    return PiecewiseConstantControl(bp, [float(r["u"]) for r in rows])
