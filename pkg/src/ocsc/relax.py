"""Discrete floor constraints: feasibility classes, reachability, control
surgery, penalised Ekeland functionals and a penalty-path solver."""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _rk4
from .errors import ContractError, ControllabilityError, InfeasibleProblem, SurgeryFailed
from .integrate import (
    PiecewiseConstantControl,
    build_grid,
    evaluate_cost,
    integrate_forward,
    integrate_on_grid,
    integrate_segment,
)
from .problem import ConstraintGrid

FEAS_ATOL = 1e-9

STRICT, FEASIBLE, DELTA_FEASIBLE, INFEASIBLE = "strict", "feasible", "delta_feasible", "infeasible"
_RANK = {INFEASIBLE: 0, DELTA_FEASIBLE: 1, FEASIBLE: 2, STRICT: 3}


@dataclass(frozen=True)
class FeasibilityVerdict:
    """``category`` is the tightest of strict (margin ``delta``), feasible,
    delta_feasible (slack ``delta``) and infeasible."""

    category: str
    worst_slack: float
    delta: float
    slacks: tuple = ()

    @property
    def rank(self):
        return _RANK[self.category]

    @property
    def is_feasible(self):
        return self.rank >= _RANK[FEASIBLE]

    def belongs_to(self, category):
        """Set membership, so ``strict`` belongs to ``feasible`` and ``delta_feasible``."""
        return self.rank >= _RANK[category]


def classify_slacks(slacks, delta, atol=FEAS_ATOL):
    if delta < 0:
        raise ContractError("delta must be nonnegative")
    slacks = tuple(float(s) for s in slacks)
    worst = min(slacks)
    if delta > 0 and worst >= delta - atol:
        cat = STRICT
    elif worst >= -atol:
        cat = FEASIBLE
    elif worst >= -delta - atol:
        cat = DELTA_FEASIBLE
    else:
        cat = INFEASIBLE
    return FeasibilityVerdict(cat, worst, float(delta), slacks)


def constraint_slacks(trajectory, grid, floor):
    """``X(t_i) - floor`` for ``i = 0..n``; raises if a ``t_i`` is off-grid."""
    return np.array([trajectory.at(t) - floor for t in grid.times])


def classify_feasibility(trajectory, grid, floor, delta, atol=FEAS_ATOL):
    return classify_slacks(constraint_slacks(trajectory, grid, floor), delta, atol)


@dataclass(frozen=True)
class PairDistance:
    state_sup: float
    control_l1: float

    @property
    def total(self):
        return self.state_sup + self.control_l1


def pair_distance(problem, control_a, control_b, steps=None, knots=None):
    """Distance of two pairs, both integrated on one common grid."""
    steps = steps or _rk4.default_steps(problem.horizon)
    times = build_grid(problem.horizon, steps, control_a.breakpoints, control_b.breakpoints, knots)
    xa = integrate_on_grid(problem, control_a, times)
    xb = integrate_on_grid(problem, control_b, times)
    return PairDistance(float(np.max(np.abs(xa - xb))), control_a.l1_distance(control_b))


# reachability ---------------------------------------------------------------


def endpoint(problem, t, x, s, u, steps_per_unit=_rk4.STEPS_PER_UNIT):
    """State at ``s`` from ``(t, x)`` under the constant control ``u``."""
    seg = PiecewiseConstantControl.constant(u, t, s)
    return float(integrate_segment(problem, seg, x, steps_per_unit).states[-1])


def reach_target(problem, start, end_time, target, tol=1e-10, *, steps_per_unit=_rk4.STEPS_PER_UNIT):
    """Constant control on ``[t, end_time]`` steering ``x`` onto ``target``.

    Brent's method on the endpoint map over ``[u_min, u_max]``; the map
    is continuous and, for drifts monotone in ``u``, monotone.

    Raises
    ------
    ControllabilityError
        If the extreme controls do not bracket ``target``.
    """
    t, x = map(float, start)
    end_time = float(end_time)
    if end_time < t:
        raise ContractError("end_time precedes the start time")
    if end_time == t:
        if abs(x - target) <= tol:
            return PiecewiseConstantControl([t], [])
        raise ControllabilityError(f"zero-length interval cannot move {x} onto {target}")
    lo, hi = problem.u_min, problem.u_max

    def g(u):
        return endpoint(problem, t, x, end_time, u, steps_per_unit) - target

    g_lo, g_hi = g(lo), g(hi)
    if abs(g_lo) <= tol:
        return PiecewiseConstantControl.constant(lo, t, end_time)
    if abs(g_hi) <= tol:
        return PiecewiseConstantControl.constant(hi, t, end_time)
    if g_lo * g_hi > 0:
        raise ControllabilityError(
            f"target {target} at {end_time} not bracketed from ({t}, {x}): endpoints {g_lo + target}, {g_hi + target}"
        )
    u = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return PiecewiseConstantControl.constant(u, t, end_time)


# surgery --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SurgeryResult:
    control: PiecewiseConstantControl
    trajectory: object
    distance: PairDistance
    verdict: FeasibilityVerdict
    delta: float
    cases: tuple
    repaired: tuple

    @property
    def c_estimate(self):
        return self.distance.total / math.sqrt(self.delta) if self.delta > 0 else 0.0

    def to_dict(self):
        return {
            "delta": self.delta,
            "distance_state_sup": self.distance.state_sup,
            "distance_control_l1": self.distance.control_l1,
            "C_estimate": self.c_estimate,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def _case(prev_ok, cur_ok):
    return {(True, True): 1, (True, False): 2, (False, False): 3, (False, True): 4}[(prev_ok, cur_ok)]


def _partial_state(problem, seg_traj, seg_control, r):
    """State at ``r`` along a segment trajectory (one partial RK4 step)."""
    times = seg_traj.times
    k = int(np.clip(np.searchsorted(times, r, side="right") - 1, 0, times.size - 2))
    if r <= times[k]:
        return float(seg_traj.states[k])
    u = float(seg_control(0.5 * (times[k] + r)))
    states, _ = _rk4.rk4_scalar(problem.dynamics, seg_traj.states[k], [times[k], r], [u])
    return states[-1]


def _split_latest(problem, seg, y, floor, steps_per_unit):
    """Latest ``r`` such that switching to the extreme raising control on
    ``[r, b)`` still lands on or above the floor."""
    a, b = seg.start, seg.end
    x_lo = endpoint(problem, a, y, b, problem.u_min, steps_per_unit)
    x_hi = endpoint(problem, a, y, b, problem.u_max, steps_per_unit)
    u_up = problem.u_max if x_hi >= x_lo else problem.u_min

    def gain(r):
        head = integrate_segment(problem, seg.restrict(a, r), y, steps_per_unit)
        return endpoint(problem, r, head.states[-1], b, u_up, steps_per_unit) - floor

    if gain(a) < 0:
        return a
    r = brentq(gain, a, b, xtol=1e-13)
    while gain(r) < 0 and r > a:
        r = max(a, r - 1e-12 * max(1.0, b))
    return r


def _split_crossing(problem, seg, seg_traj, floor):
    """Last time the kept segment path is at or above the floor."""
    above = np.flatnonzero(seg_traj.states >= floor)
    if above.size == 0:
        return seg.start
    k = int(above[-1])
    t0, t1 = seg_traj.times[k], seg_traj.times[k + 1]
    if seg_traj.states[k] == floor:
        return t0
    return brentq(lambda r: _partial_state(problem, seg_traj, seg, r) - floor, t0, t1, xtol=1e-14)


def control_surgery(problem, pair, grid, delta, *, split="latest", steps=None, atol=FEAS_ATOL):
    """Repair a ``delta``-feasible pair into one meeting every floor exactly.

    Sweeps the constraint intervals keeping the repaired state at
    ``t_{i-1}``. An interval keeps its control whenever that already
    lands on or above the floor (by comparison this covers intervals that
    end feasible). Otherwise the control is kept on ``[t_{i-1}, s)`` and
    :func:`reach_target` steers onto the floor at ``t_i``. ``split``
    chooses ``s``: ``"crossing"`` is the last floor crossing of the kept
    path, ``"latest"`` the last time from which the raising extreme
    control can still reach the floor, which changes the control in a
    single direction on the interval.

    Raises
    ------
    SurgeryFailed
        If the floor cannot be reached on some interval.
    """
    if split not in ("latest", "crossing"):
        raise ContractError(f"unknown split rule {split!r}")
    control, traj = pair
    grid.check_matches(problem)
    floor = problem.constraint_floor
    steps = steps or _rk4.default_steps(problem.horizon)
    spu = steps / problem.horizon
    before = classify_feasibility(traj, grid, floor, delta, atol)
    if not before.belongs_to(DELTA_FEASIBLE):
        raise ContractError(f"pair is not delta-feasible: worst slack {before.worst_slack} < -{delta}")
    orig_ok = [s >= -atol for s in before.slacks]
    cases = tuple(_case(orig_ok[i - 1], orig_ok[i]) for i in range(1, grid.n + 1))
    if before.is_feasible:
        dist = PairDistance(0.0, 0.0)
        return SurgeryResult(control, traj, dist, before, float(delta), cases, ())

    y = problem.initial_state
    pieces, repaired = [], []
    for i in range(1, grid.n + 1):
        a, b = grid.times[i - 1], grid.times[i]
        seg = control.restrict(a, b)
        seg_traj = integrate_segment(problem, seg, y, spu)
        if seg_traj.states[-1] >= floor:
            pieces.append(seg)
            y = float(seg_traj.states[-1])
            continue
        if split == "latest":
            s = _split_latest(problem, seg, y, floor, spu)
            x_s = float(integrate_segment(problem, seg.restrict(a, s), y, spu).states[-1])
        else:
            s = _split_crossing(problem, seg, seg_traj, floor)
            x_s = _partial_state(problem, seg_traj, seg, s)
        try:
            tail = reach_target(problem, (s, x_s), b, floor, steps_per_unit=spu)
        except ControllabilityError as exc:
            raise SurgeryFailed(i, str(exc)) from exc
        head = seg.restrict(a, s)
        pieces.extend([head, tail])
        repaired.append(i)
        x_end = float(integrate_segment(problem, PiecewiseConstantControl.concatenate([head, tail]), y, spu).states[-1])
        y = max(x_end, floor) if x_end >= floor - atol else x_end
    new_control = PiecewiseConstantControl.concatenate(pieces)
    new_traj = integrate_forward(problem, new_control, steps, knots=grid.times)
    after = classify_feasibility(new_traj, grid, floor, delta, atol)
    if not after.is_feasible:
        bad = int(np.argmin(after.slacks))
        raise SurgeryFailed(bad, f"repaired pair still violates the floor by {-after.worst_slack}")
    dist = pair_distance(problem, control, new_control, steps, grid.times)
    return SurgeryResult(new_control, new_traj, dist, after, float(delta), cases, tuple(repaired))


# penalised functionals ------------------------------------------------------


def ekeland_value(cost, slacks, theta, j_ref, weights=None):
    """``sqrt([(J - j_ref + theta)^+]^2 + sum_i w_i [(-slack_i)^+]^2)``."""
    slacks = np.asarray(slacks, dtype=float)
    viol = np.maximum(-slacks, 0.0)
    w = np.ones_like(viol) if weights is None else np.asarray(weights, dtype=float)
    head = np.maximum(np.asarray(cost) - j_ref + theta, 0.0)
    return np.sqrt(head**2 + np.sum(w * viol**2, axis=-1))


def _cost_and_slacks(problem, control, grid, steps):
    traj = integrate_forward(problem, control, steps, knots=grid.times)
    cost = evaluate_cost(problem, traj, control)
    slacks = constraint_slacks(traj, grid, problem.constraint_floor)[1:]
    return cost, slacks


def penalized_cost_theta(problem, control, grid, theta, j_ref, *, steps=None, weights=None):
    """Ekeland functional with the cost recentred at ``j_ref``; slacks are
    measured against the floor at ``t_1..t_n``."""
    if not theta > 0:
        raise ContractError("theta must be positive")
    cost, slacks = _cost_and_slacks(problem, control, grid, steps)
    return float(ekeland_value(cost, slacks, theta, j_ref, weights))


def penalized_cost_n(problem, control, grid, j_ref, *, weighted=False, steps=None):
    """``theta = 1 / n``; ``weighted`` puts ``1 / n^2`` on every slack term."""
    n = grid.n
    w = np.full(n, 1.0 / n**2) if weighted else None
    return penalized_cost_theta(problem, control, grid, 1.0 / n, j_ref, steps=steps, weights=w)


# cell-parameterised objective -----------------------------------------------


class CellModel:
    """Batched RK4 over controls constant on ``R`` uniform cells.

    ``R`` must be a multiple of ``n`` so every constraint time is a cell
    boundary. ``batch(V)`` returns costs ``(B,)`` and slacks ``(B, n)``.
    """

    def __init__(self, problem, grid, cells, substeps=None):
        if cells < grid.n or cells % grid.n:
            raise ContractError(f"control resolution {cells} must be a positive multiple of n = {grid.n}")
        if not np.allclose(grid.times, ConstraintGrid.uniform(grid.n, problem.horizon).times):
            raise ContractError("the cell solver needs a uniform constraint grid")
        self.problem, self.grid, self.cells = problem, grid, int(cells)
        self.substeps = substeps or max(1, math.ceil(200 / cells))
        m = self.cells * self.substeps
        self.times = np.linspace(0.0, problem.horizon, m + 1)
        self.nodes = np.arange(1, grid.n + 1) * (m // grid.n)

    def control(self, v):
        return PiecewiseConstantControl.from_cells(v, 0.0, self.problem.horizon)

    def batch(self, V):
        p = self.problem
        V = np.atleast_2d(V)
        U = np.repeat(V, self.substeps, axis=1)
        X = _rk4.rk4_batch(p.dynamics, np.full(V.shape[0], p.initial_state), self.times, U)
        h = np.diff(self.times)
        f0 = p.running_cost(X[:, :-1], U)
        f1 = p.running_cost(X[:, 1:], U)
        cost = np.sum(0.5 * h * (f0 + f1), axis=1) + p.terminal_cost(X[:, -1])
        return cost, X[:, self.nodes] - p.constraint_floor

    def fd_gradient(self, objective, v, step=1e-6):
        """Central differences of ``objective(cost, slacks, V)`` in each cell value."""
        return self.value_and_gradient(objective, v, step)[1]

    def value_and_gradient(self, objective, v, step=1e-6):
        """Objective and its central-difference gradient from one batch."""
        R = v.size
        E = np.eye(R) * step
        V = np.vstack([v[None, :], v[None, :] + E, v[None, :] - E])
        vals = objective(*self.batch(V), V)
        return float(vals[0]), (vals[1 : R + 1] - vals[R + 1 :]) / (2 * step)


@dataclass(frozen=True)
class DescentResult:
    v: np.ndarray
    value: float
    iterations: int
    stalled: bool


def projected_gradient(value, gradient, v0, lo, hi, *, max_iter=500, gtol=1e-9, ftol=1e-13, patience=8):
    """Projected gradient on a box with Barzilai-Borwein steps and Armijo
    backtracking along the projection arc."""
    v = np.clip(np.asarray(v0, dtype=float), lo, hi)
    f, g = value(v), gradient(v)
    alpha = 1.0 / max(1.0, float(np.max(np.abs(g))))
    slow = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(np.clip(v - g, lo, hi) - v)) <= gtol:
            return DescentResult(v, f, it - 1, False)
        while True:
            w = np.clip(v - alpha * g, lo, hi)
            d = w - v
            fw = value(w)
            if fw <= f + 1e-4 * float(g @ d):
                break
            alpha *= 0.5
            if alpha < 1e-18:
                return DescentResult(v, f, it, True)
        gw = gradient(w)
        s, yv = d, gw - g
        sy = float(s @ yv)
        alpha = float(np.clip(s @ s / sy, 1e-12, 1e12)) if sy > 0 else min(alpha * 4.0, 1e12)
        slow = slow + 1 if f - fw <= ftol * (1.0 + abs(f)) else 0
        v, f, g = w, fw, gw
        if slow >= patience:
            return DescentResult(v, f, it, False)
    return DescentResult(v, f, max_iter, True)


def minimize_box(model, objective, v0, *, method="lbfgsb", max_iter=500, ftol=1e-12):
    """Minimise ``objective(cost, slacks, V)`` over cell values in ``U``.

    ``method`` is ``"lbfgsb"`` (scipy's L-BFGS-B, a projected quasi-Newton
    method) or ``"bb"`` (:func:`projected_gradient`).
    """
    lo, hi = model.problem.u_min, model.problem.u_max

    def value(w):
        return float(objective(*model.batch(w), np.atleast_2d(w))[0])

    if method == "bb":
        return projected_gradient(value, lambda w: model.fd_gradient(objective, w), v0, lo, hi, max_iter=max_iter)
    if method != "lbfgsb":
        raise ContractError(f"unknown descent method {method!r}")
    from scipy.optimize import minimize

    v0 = np.clip(np.asarray(v0, dtype=float), lo, hi)
    res = minimize(
        lambda w: model.value_and_gradient(objective, w),
        v0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(lo, hi)] * v0.size,
        options={"maxiter": max_iter, "ftol": ftol, "gtol": 1e-10},
    )
    v = np.clip(res.x, lo, hi)
    return DescentResult(v, float(value(v)), int(res.nit), bool(res.status == 1))


# solver ---------------------------------------------------------------------

PENALTIES = tuple(10.0**k for k in range(1, 8))


@dataclass(frozen=True)
class SolverOptions:
    control_resolution: int = None
    random_starts: int = 1
    seed: int = 0
    penalties: tuple = PENALTIES
    feas_tol: float = 1e-6
    max_iter: int = 300
    ftol: float = 1e-12
    method: str = "lbfgsb"
    substeps: int = None
    steps: int = None


@dataclass(frozen=True, eq=False)
class SolverResult:
    control: PiecewiseConstantControl
    trajectory: object
    cost: float
    verdict: FeasibilityVerdict
    iterations: int
    penalty_final: float
    starts_tried: int
    n: int
    start_costs: tuple = field(default=())

    def to_dict(self):
        return {
            "n": self.n,
            "cost": self.cost,
            "worst_slack": self.verdict.worst_slack,
            "iterations": self.iterations,
            "penalty_final": self.penalty_final,
            "starts_tried": self.starts_tried,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def _penalty_path(model, v0, opts):
    p = model.problem
    v, iters, mu_used = v0, 0, opts.penalties[0]
    for mu in opts.penalties:

        def obj(cost, slacks, V, mu=mu):
            return cost + mu * np.sum(np.maximum(-slacks, 0.0) ** 2, axis=-1)

        res = minimize_box(
            model,
            obj,
            v,
            method=opts.method,
            max_iter=opts.max_iter,
            ftol=opts.ftol,
        )
        v, iters, mu_used = res.v, iters + res.iterations, mu
        _, slacks = model.batch(v)
        if slacks.min() >= -opts.feas_tol:
            break
    return v, iters, mu_used


def _starts(problem, cells, opts):
    lo, hi = problem.u_min, problem.u_max
    out = [np.full(cells, lo), np.full(cells, hi), np.full(cells, float(np.clip(0.0, lo, hi)))]
    rng = np.random.default_rng(opts.seed)
    out += [rng.uniform(lo, hi, cells) for _ in range(opts.random_starts)]
    return out


def solve_discrete_constrained(problem, grid, control_resolution=None, options=None):
    """Cheapest pair found meeting the floor at every ``t_i``.

    Each start runs a box-constrained descent (L-BFGS-B by default) on
    ``J + mu sum [(floor - X(t_i))^+]^2``
    over an escalating ``mu`` schedule and is then moved exactly onto the
    feasible set by :func:`control_surgery`. Ties in cost go to the smaller
    control ``L1`` norm.

    Raises
    ------
    InfeasibleProblem
        If no start can be repaired into a feasible pair.
    """
    opts = options or SolverOptions()
    cells = control_resolution or opts.control_resolution or 20 * grid.n
    steps = opts.steps or _rk4.default_steps(problem.horizon)
    model = CellModel(problem, grid, cells, opts.substeps)
    best, total_iters, tried, costs, last_mu = None, 0, 0, [], opts.penalties[0]
    for v0 in _starts(problem, cells, opts):
        tried += 1
        v, iters, mu = _penalty_path(model, v0, opts)
        total_iters += iters
        u = model.control(v)
        traj = integrate_forward(problem, u, steps, knots=grid.times)
        worst = classify_feasibility(traj, grid, problem.constraint_floor, 0.0).worst_slack
        try:
            fixed = control_surgery(problem, (u, traj), grid, max(-worst, 0.0) + 1e-12, steps=steps)
        except (SurgeryFailed, ContractError):
            costs.append(math.inf)
            continue
        cost = evaluate_cost(problem, fixed.trajectory, fixed.control)
        costs.append(cost)
        key = (cost, fixed.control.l1_distance(PiecewiseConstantControl.constant(0.0, 0.0, problem.horizon)))
        if best is None or key < best[0]:
            best, last_mu = (key, fixed), mu
    if best is None:
        raise InfeasibleProblem("no start reached the discrete feasible set")
    fixed = best[1]
    return SolverResult(
        fixed.control,
        fixed.trajectory,
        best[0][0],
        fixed.verdict,
        total_iters,
        last_mu,
        tried,
        grid.n,
        tuple(costs),
    )


# Ekeland sequence -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EkelandRecord:
    n: int
    control: PiecewiseConstantControl
    min_state: float
    cost_gap: float
    l2_distance: float
    value: float
    slack_ok: bool
    cost_ok: bool
    stalled: bool
    iterations: int

    @property
    def passed(self):
        return self.slack_ok and self.cost_ok

    def to_dict(self):
        return {
            "n": self.n,
            "min_state": self.min_state,
            "cost_gap": self.cost_gap,
            "l2_distance": self.l2_distance,
            "value": self.value,
            "slack_ok": self.slack_ok,
            "cost_ok": self.cost_ok,
            "stalled": self.stalled,
            "iterations": self.iterations,
        }


def ekeland_sequence(
    problem,
    n_values,
    j_ref,
    *,
    reference_control=None,
    anchored=True,
    cells_per_interval=4,
    eps=1e-4,
    steps=None,
    max_iter=400,
    method="lbfgsb",
):
    """Approximate minimisers of the penalised functional ``J^n`` (``theta = 1/n``).

    The descent starts from the cell projection ``v`` of
    ``reference_control`` (constant ``0`` clipped to ``U`` if omitted).
    With ``anchored`` it minimises ``J^n(u) + sqrt(1/n) d(u, v)``, ``d``
    the ``L2`` control distance; since ``J^n(v) = 1/n`` at an optimal
    reference, the minimiser keeps ``J^n <= 1/n`` and ``d <= sqrt(1/n)``.
    Otherwise ``J^n`` alone is minimised.

    Certificates, measured on the default fine grid: every
    ``X(t_i) >= floor - 1/n - eps`` and ``J - j_ref`` in ``[-2/n - eps, eps]``.
    """
    n_values = [int(n) for n in n_values]
    if any(n < 1 for n in n_values) or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ContractError("n_values must be positive and increasing")
    steps = steps or _rk4.default_steps(problem.horizon)
    if reference_control is None:
        reference_control = PiecewiseConstantControl.constant(
            float(np.clip(0.0, problem.u_min, problem.u_max)), 0.0, problem.horizon
        )
    records = []
    for n in n_values:
        grid = ConstraintGrid.uniform(n, problem.horizon)
        model = CellModel(problem, grid, cells_per_interval * n)
        edges = np.linspace(0.0, problem.horizon, model.cells + 1)
        v0 = np.array([_cell_mean(reference_control, a, b) for a, b in zip(edges, edges[1:])])
        width = problem.horizon / model.cells
        weight = math.sqrt(1.0 / n) if anchored else 0.0

        def obj(cost, slacks, V, n=n, v0=v0, weight=weight):
            dist = np.sqrt(width * np.sum((V - v0) ** 2, axis=-1))
            return ekeland_value(cost, slacks, 1.0 / n, j_ref) + weight * dist

        res = minimize_box(model, obj, v0, method=method, max_iter=max_iter)
        u = model.control(res.v)
        cost, slacks = _cost_and_slacks(problem, u, grid, steps)
        gap = cost - j_ref
        min_state = float(np.min(slacks)) + problem.constraint_floor
        records.append(
            EkelandRecord(
                n,
                u,
                min_state,
                float(gap),
                u.l2_distance(reference_control),
                float(ekeland_value(cost, slacks, 1.0 / n, j_ref)),
                bool(min_state >= problem.constraint_floor - 1.0 / n - eps),
                bool(-2.0 / n - eps <= gap <= eps),
                res.stalled,
                res.iterations,
            )
        )
    return records


def _cell_mean(control, a, b):
    piece = control.restrict(a, b)
    return float(np.sum(np.diff(piece.breakpoints) * piece.values) / (b - a))
