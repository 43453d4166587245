"""Piecewise costates with jumps at constraint times, the Hamiltonian, and
pointwise verification of the maximum condition."""

import csv
import json
from collections import namedtuple
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, IntegrationDiverged
from .integrate import linear_rk4_coefficients, step_controls

JumpRecord = namedtuple("JumpRecord", "time left right size")

_SIGN_TOL = 1e-12


@dataclass(frozen=True)
class Multipliers:
    """``beta0 >= 0`` on the cost and ``betas[j-1] = beta^j <= 0`` on the
    floor at ``t_j``, ``j = 1..n``.

    Normalisation to unit Euclidean norm is not enforced here (zero
    multipliers are useful in tests); see :meth:`is_normalized`.
    """

    beta0: float
    betas: tuple

    def __post_init__(self):
        betas = tuple(float(b) for b in np.ravel(self.betas))
        if self.beta0 < -_SIGN_TOL:
            raise ContractError(f"beta0 must be nonnegative, got {self.beta0}")
        if any(b > _SIGN_TOL for b in betas):
            raise ContractError("floor multipliers must be nonpositive")
        object.__setattr__(self, "beta0", max(float(self.beta0), 0.0))
        object.__setattr__(self, "betas", tuple(min(b, 0.0) for b in betas))

    @classmethod
    def zeros(cls, n, beta0=0.0):
        return cls(beta0, (0.0,) * n)

    @property
    def n(self):
        return len(self.betas)

    def as_array(self):
        return np.array((self.beta0,) + self.betas)

    def norm(self, weight=1.0):
        b = np.asarray(self.betas) * weight
        return float(np.sqrt(self.beta0**2 + np.sum(b * b)))

    def is_normalized(self, tol=1e-9, weight=1.0):
        return abs(self.norm(weight) - 1.0) <= tol

    def normalized(self):
        s = self.norm()
        if s == 0:
            raise ContractError("cannot normalise all-zero multipliers")
        return Multipliers(self.beta0 / s, tuple(b / s for b in self.betas))

    def scaled(self, alpha):
        return Multipliers(alpha * self.beta0, tuple(alpha * b for b in self.betas))

    def slackness_violations(self, slacks, tol=1e-7):
        """Indices ``j`` with ``beta^j != 0`` although ``X(t_j)`` is strictly feasible."""
        return [j + 1 for j, (b, s) in enumerate(zip(self.betas, slacks)) if b < 0 and s > tol]

    def to_averaged(self):
        """Multipliers for the averaged-drift form: ``beta^{n,j} = n beta^j``."""
        return Multipliers(self.beta0, tuple(self.n * b for b in self.betas))


@dataclass(frozen=True, eq=False)
class AdjointPath:
    """Costate on a time grid.

    At a constraint time ``t_i`` the stored value is ``p(t_i)``, the limit
    from the left; ``jumps`` records ``(t_i, p(t_i), p(t_i+), size)``.
    ``shift`` is the per-node drift offset of the averaged form (zero for
    the jump forms); the maximum condition uses ``values - shift``.
    """

    times: np.ndarray
    values: np.ndarray
    jumps: tuple
    beta0: float = 1.0
    form: str = "jump"
    shift: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        shift = np.zeros_like(self.values) if self.shift is None else np.asarray(self.shift, dtype=float)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "jumps", tuple(JumpRecord(*j) for j in self.jumps))

    @property
    def effective(self):
        return self.values - self.shift

    def jump_residuals(self, expected_sizes):
        """``|(left - right) - expected|`` per constraint time."""
        return [abs((j.left - j.right) - e) for j, e in zip(self.jumps, expected_sizes)]

    def write_csv(self, path):
        flagged = {round(j.time, 12) for j in self.jumps if j.size != 0.0}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "p", "jump_flag"])
            for t, p in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(p)), int(round(float(t), 12) in flagged)])


def _constraint_nodes(trajectory, grid):
    return [trajectory.index_of(t) for t in grid.times[1:]]


def _backward_sweep(problem, pair, grid, beta0, jump_at, shift_per_interval=None, *, form):
    """Integrate ``-p' = b_x p - beta0 f_x - c_i b_x`` backwards from
    ``p(T+) = 0``, applying ``p(t_i) = p(t_i+) + jump_at(i)``."""
    control, traj = pair
    grid.check_matches(problem)
    times, states = traj.times, traj.states
    uvals = step_controls(control, times)
    nodes = _constraint_nodes(traj, grid)
    # interval of each node by index, so nodes a few ulps off t_i still belong to interval i
    node_interval = np.clip(np.searchsorted(nodes, np.arange(times.size), side="left") + 1, 1, grid.n)
    step_interval = node_interval[1:]
    c = np.zeros(times.size - 1)
    if shift_per_interval is not None:
        c = np.asarray(shift_per_interval, dtype=float)[step_interval - 1]

    def forcing(x, u):
        return beta0 * problem.f_x(x, u) + c * problem.b_x(x, u)

    am, gm = linear_rk4_coefficients(problem, times, states, uvals, forcing)
    a0, amid, a1 = (-arr for arr in am)
    g0, gmid, g1 = gm
    a0, amid, a1, g0, gmid, g1 = (v.tolist() for v in (a0, amid, a1, g0, gmid, g1))
    hs = np.diff(times).tolist()

    jump_node = {k: i for i, k in enumerate(nodes, start=1)}
    values = np.empty(times.size)
    records = []
    p = 0.0
    M = times.size - 1
    for k in range(M, -1, -1):
        if k in jump_node:
            i = jump_node[k]
            size = float(jump_at(i))
            right = p
            p = p + size
            records.append(JumpRecord(float(times[k]), p, right, size))
        values[k] = p
        if k == 0:
            break
        j = k - 1
        h = -hs[j]
        k1 = a1[j] * p + g1[j]
        k2 = amid[j] * (p + 0.5 * h * k1) + gmid[j]
        k3 = amid[j] * (p + 0.5 * h * k2) + gmid[j]
        k4 = a0[j] * (p + h * k3) + g0[j]
        p = p + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.isfinite(p):
            raise IntegrationDiverged(times[j])
    shift = None
    if shift_per_interval is not None:
        shift = np.asarray(shift_per_interval, dtype=float)[node_interval - 1]
    return AdjointPath(times, values, tuple(reversed(records)), beta0=beta0, form=form, shift=shift)


def _check_sizes(mult, grid):
    if mult.n != grid.n:
        raise ContractError(f"{mult.n} floor multipliers for a grid with {grid.n} constraint times")


def integrate_adjoint(problem, pair, grid, mult):
    """Costate with jumps ``-beta^i`` at each ``t_i`` and the terminal cost
    entering as an extra jump ``-beta0 Psi_x(X(T))`` at ``t_n``."""
    _check_sizes(mult, grid)
    psi_x = float(problem.psi_x(pair[1].states[-1]))
    n = grid.n

    def jump(i):
        return -mult.betas[i - 1] - (mult.beta0 * psi_x if i == n else 0.0)

    return _backward_sweep(problem, pair, grid, mult.beta0, jump, form="jump")


def integrate_adjoint_multitime(problem, pair, grid, psi_gradient):
    """Costate for a cost ``int f dt + psi(X(t_1), ..., X(t_n))`` with
    ``psi_gradient[i-1] = d psi / d x_i`` at the base pair."""
    g = np.asarray(psi_gradient, dtype=float).ravel()
    if g.size != grid.n:
        raise ContractError(f"psi gradient has {g.size} entries for {grid.n} constraint times")
    return _backward_sweep(problem, pair, grid, 1.0, lambda i: -g[i - 1], form="multitime")


def integrate_adjoint_averaged(problem, pair, grid, mult, *, check_normalization=True):
    """Costate of the averaged form: no interior jumps, and on
    ``(t_{i-1}, t_i)`` an extra drift ``-(sum_{j>=i} beta^{n,j} / n) b_x``."""
    _check_sizes(mult, grid)
    n = grid.n
    if check_normalization and not mult.is_normalized(weight=1.0 / n):
        raise ContractError("averaged multipliers need |beta0|^2 + sum |beta^j / n|^2 = 1")
    betas = np.asarray(mult.betas)
    tail = np.cumsum(betas[::-1])[::-1] / n
    psi_x = float(problem.psi_x(pair[1].states[-1]))

    def jump(i):
        return -mult.beta0 * psi_x if i == n else 0.0

    return _backward_sweep(problem, pair, grid, mult.beta0, jump, tail, form="averaged")


def hamiltonian(problem, beta0, x, u, p, shift=0.0):
    """``b(x, u) (p - shift) - beta0 f(x, u)``; ``shift`` is the averaged
    multiplier offset and zero for the jump forms."""
    return problem.dynamics(x, u) * (p - shift) - beta0 * problem.running_cost(x, u)


@dataclass(frozen=True)
class PMPReport:
    max_violation: float
    worst_t: float
    worst_u: float
    tol: float
    passed: bool

    def to_json(self):
        return json.dumps(asdict(self))


def interior_nodes(trajectory, grid):
    """Node indices strictly inside some ``(t_{i-1}, t_i)``."""
    mask = np.ones(trajectory.times.size, dtype=bool)
    mask[0] = False
    for k in [trajectory.index_of(t) for t in grid.times]:
        mask[k] = False
    return np.flatnonzero(mask)


def default_tol(adjoint):
    return 1e-6 * (1.0 + float(np.max(np.abs(adjoint.effective))))


def pmp_gaps(problem, pair, adjoint, beta0, nodes, ugrid, chunk=2048):
    """``max_u H - H(ubar)`` and the maximising ``u`` at each node."""
    control, traj = pair
    x = traj.states[nodes]
    p = adjoint.effective[nodes]
    ubar = step_controls(control, traj.times)[nodes]
    gaps = np.empty(nodes.size)
    arg = np.empty(nodes.size)
    for s in range(0, nodes.size, chunk):
        sl = slice(s, s + chunk)
        xs, ps = x[sl, None], p[sl, None]
        H = hamiltonian(problem, beta0, xs, ugrid[None, :], ps)
        H = np.broadcast_to(H, (xs.shape[0], ugrid.size))
        h_bar = np.broadcast_to(hamiltonian(problem, beta0, x[sl], ubar[sl], p[sl]), (xs.shape[0],))
        j = np.argmax(H, axis=1)
        gaps[sl] = H[np.arange(j.size), j] - h_bar
        arg[sl] = ugrid[j]
    return gaps, arg


def check_pmp(problem, pair, grid, mult, adjoint, u_grid_size=601, tol=None):
    """Largest gain of the Hamiltonian over the base control, on a uniform
    ``u_grid_size``-point grid of ``U``, at every interior grid node."""
    if u_grid_size < 2:
        raise ContractError("u_grid_size must be >= 2")
    _check_sizes(mult, grid)
    tol = default_tol(adjoint) if tol is None else float(tol)
    nodes = interior_nodes(pair[1], grid)
    ugrid = np.linspace(problem.u_min, problem.u_max, u_grid_size)
    gaps, arg = pmp_gaps(problem, pair, adjoint, mult.beta0, nodes, ugrid)
    k = int(np.argmax(gaps))
    worst = float(max(gaps[k], 0.0))
    node = nodes[k]
    return PMPReport(worst, float(pair[1].times[node]), float(arg[k]), tol, bool(worst <= tol))


# multiplier discovery --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MultiplierFit:
    multipliers: Multipliers
    adjoint: AdjointPath
    report: PMPReport
    free: tuple
    rounds: int


def _sample_nodes(traj, nodes, control, limit):
    if nodes.size <= limit:
        return nodes
    stride = int(np.ceil(nodes.size / limit))
    picked = set(nodes[::stride].tolist())
    # keep both neighbours of every control switch
    for t in control.breakpoints[1:-1]:
        k = int(np.searchsorted(traj.times, t))
        picked.update(j for j in (k - 1, k, k + 1) if j in set(nodes.tolist()))
    return np.array(sorted(picked))


def fit_multipliers(
    problem,
    pair,
    grid,
    *,
    free=None,
    beta0_free=True,
    active_tol=1e-7,
    u_grid_size=601,
    lp_u_points=21,
    max_time_samples=2000,
    rounds=8,
):
    """Multipliers minimising the worst Hamiltonian gain along ``pair``.

    The costate is linear in ``(beta0, -beta^1, ..., -beta^n)``, so the
    worst gain over a finite set of ``(t, u)`` rows is a linear program
    once the multipliers are scaled to unit ``l1`` norm. Rows are added
    from the full check until it passes or ``rounds`` is exhausted; the
    result is rescaled to unit Euclidean norm.

    Parameters
    ----------
    free : iterable of int, optional
        1-based constraint indices whose multiplier may be nonzero. The
        default keeps only active constraints (slack <= ``active_tol``).
    """
    from scipy.optimize import linprog

    control, traj = pair
    n = grid.n
    slacks = np.array([traj.at(t) - problem.constraint_floor for t in grid.times[1:]])
    if free is None:
        free = [j for j in range(1, n + 1) if slacks[j - 1] <= active_tol]
    free = tuple(sorted(int(j) for j in free))
    if any(not 1 <= j <= n for j in free):
        raise ContractError(f"free indices must lie in 1..{n}")
    if not free and not beta0_free:
        raise ContractError("no multiplier is allowed to be nonzero")

    basis = []
    if beta0_free:
        basis.append(integrate_adjoint(problem, pair, grid, Multipliers.zeros(n, 1.0)))
    for j in free:
        betas = [0.0] * n
        betas[j - 1] = -1.0
        basis.append(integrate_adjoint(problem, pair, grid, Multipliers(0.0, betas)))
    P = np.stack([b.values for b in basis], axis=1)
    m = P.shape[1]

    nodes = interior_nodes(traj, grid)
    x_all = traj.states
    u_bar_all = step_controls(control, traj.times)
    ugrid_full = np.linspace(problem.u_min, problem.u_max, u_grid_size)
    ugrid_lp = np.linspace(problem.u_min, problem.u_max, lp_u_points)

    def rows_for(idx, us):
        x = x_all[idx][:, None]
        ub = u_bar_all[idx][:, None]
        db = np.broadcast_to(problem.dynamics(x, us[None, :]) - problem.dynamics(x, ub), (idx.size, us.size))
        df = np.broadcast_to(problem.running_cost(x, us[None, :]) - problem.running_cost(x, ub), (idx.size, us.size))
        coef = db[:, :, None] * P[idx][:, None, :]
        if beta0_free:
            coef[:, :, 0] -= df
        return coef.reshape(-1, m)

    sample = _sample_nodes(traj, nodes, control, max_time_samples)
    A = rows_for(sample, ugrid_lp)
    z = None
    report = None
    used = 0
    for used in range(1, rounds + 1):
        A_ub = np.hstack([A, -np.ones((A.shape[0], 1))])
        res = linprog(
            c=np.r_[np.zeros(m), 1.0],
            A_ub=A_ub,
            b_ub=np.zeros(A.shape[0]),
            A_eq=np.r_[np.ones(m), 0.0][None, :],
            b_eq=[1.0],
            bounds=[(0, None)] * m + [(0, None)],
            method="highs",
        )
        if not res.success:
            raise RuntimeError(f"multiplier LP failed: {res.message}")
        z = res.x[:m] / np.linalg.norm(res.x[:m])
        mult = _assemble(z, free, n, beta0_free)
        adj = integrate_adjoint(problem, pair, grid, mult)
        gaps, arg = pmp_gaps(problem, pair, adj, mult.beta0, nodes, ugrid_full)
        tol = default_tol(adj)
        report = PMPReport(
            float(max(gaps.max(), 0.0)),
            float(traj.times[nodes[int(np.argmax(gaps))]]),
            float(arg[int(np.argmax(gaps))]),
            tol,
            bool(gaps.max() <= tol),
        )
        if report.passed:
            break
        worst = np.argsort(gaps)[::-1][:64]
        worst = worst[gaps[worst] > tol]
        A = np.vstack([A, rows_for(nodes[worst], np.unique(np.r_[arg[worst], problem.u_min, problem.u_max]))])
    return MultiplierFit(mult, adj, report, free, used)


def _assemble(z, free, n, beta0_free):
    beta0 = float(z[0]) if beta0_free else 0.0
    offset = 1 if beta0_free else 0
    betas = [0.0] * n
    for k, j in enumerate(free):
        betas[j - 1] = -float(z[offset + k])
    return Multipliers(beta0, betas)
