"""Closed-form reference solutions for the scalar LQ benchmark

    X' = X + u,  X(0) = 2,  u in [-3, 3],  T = 1,
    J = int_0^1 X^2 dt + X(1)^2,  X >= 1.

Under the drift ``x + u`` with constant control ``u`` the state from
``(a, x_a)`` is ``-u + (x_a + u) exp(t - a)``; every segment below is of
that form.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointPath
from .errors import BracketError, ContractError
from .integrate import PiecewiseConstantControl
from .problem import ConstraintGrid, affine_problem

U_FALL, U_RISE, U_HOLD = -3.0, 3.0, -1.0
FLOOR = 1.0
X0 = 2.0
LN2 = math.log(2.0)
WORKED_N = 10


def lq_problem(floor=FLOOR):
    return affine_problem(1.0, 1.0, 1.0, 1.0, -3.0, 3.0, X0, 1.0, floor, name="lq")


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    u: float
    x_start: float

    @property
    def tag(self):
        return {U_FALL: "fall", U_RISE: "rise", U_HOLD: "hold"}.get(self.u, "const")

    def state(self, t):
        return -self.u + (self.x_start + self.u) * np.exp(np.asarray(t) - self.t_start)

    @property
    def x_end(self):
        return float(self.state(self.t_end))

    def cost(self):
        """``int x(t)^2 dt`` over the segment, exactly."""
        L = self.t_end - self.t_start
        c = self.x_start + self.u
        return self.u**2 * L - 2.0 * self.u * c * math.expm1(L) + 0.5 * c * c * math.expm1(2.0 * L)


@dataclass(frozen=True)
class LqSegments:
    segments: tuple
    switch_times: dict = field(default_factory=dict)
    n: int = 0
    derived_construction: bool = False

    @property
    def cost(self):
        return sum(s.cost() for s in self.segments) + self.segments[-1].x_end ** 2

    def state(self, t):
        t = np.asarray(t, dtype=float)
        starts = np.array([s.t_start for s in self.segments])
        idx = np.clip(np.searchsorted(starts, t, side="left") - 1, 0, len(self.segments) - 1)
        out = np.empty_like(t)
        for k, seg in enumerate(self.segments):
            sel = idx == k
            if np.any(sel):
                out[sel] = seg.state(t[sel])
        return out

    def control(self):
        bp = [self.segments[0].t_start] + [s.t_end for s in self.segments]
        return PiecewiseConstantControl(bp, [s.u for s in self.segments]).canonical()

    def junction_gaps(self):
        return [abs(a.x_end - b.x_start) for a, b in zip(self.segments, self.segments[1:])]


def lq_continuous_optimum():
    """Fall at ``u = -3`` until the floor is met at ``ln 2``, then hold."""
    fall = Segment(0.0, LN2, U_FALL, X0)
    hold = Segment(LN2, 1.0, U_HOLD, FLOOR)
    return LqSegments((fall, hold), n=0)


def switch_residual(l, interval, entry_state, target=FLOOR):
    """Endpoint error at ``b`` after falling from ``(a, entry)`` until ``l``
    and rising from ``l`` to ``b``."""
    a, b = interval
    x_l = 3.0 - (3.0 - entry_state) * math.exp(l - a)
    return -3.0 + (x_l + 3.0) * math.exp(b - l) - target


def lq_switch_time(interval, entry_state, target=FLOOR, tol=1e-12):
    """Root in ``(a, b)`` of the fall-then-rise junction equation.

    Bisection down to ``tol`` in time, then a single secant polish kept
    only if it does not worsen the residual.
    """
    a, b = map(float, interval)
    ga, gb = switch_residual(a, interval, entry_state, target), switch_residual(b, interval, entry_state, target)
    if ga == 0.0:
        return a
    if gb == 0.0:
        return b
    if ga * gb > 0:
        raise BracketError(f"no sign change of the switching equation on ({a}, {b})")
    lo, hi, glo = a, b, ga
    while hi - lo > tol * 1e-3 and hi - lo > 4 * math.ulp(hi):
        mid = 0.5 * (lo + hi)
        gm = switch_residual(mid, interval, entry_state, target)
        if gm == 0.0:
            return mid
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    ghi = switch_residual(hi, interval, entry_state, target)
    best = lo if abs(glo) <= abs(ghi) else hi
    if ghi != glo:
        sec = lo - glo * (hi - lo) / (ghi - glo)
        if lo <= sec <= hi and abs(switch_residual(sec, interval, entry_state, target)) < abs(
            switch_residual(best, interval, entry_state, target)
        ):
            best = sec
    return best


def lq_discrete_optimum(n=WORKED_N):
    """Optimal pair under the floor enforced at ``t_i = i / n`` only.

    Cells whose right end stays above the floor under ``u = -3`` are
    pure falls; every later cell falls and then rises back onto the floor
    at its right end. ``n = 10`` is the worked instance; other ``n`` use
    the same construction and are flagged ``derived_construction``.
    """
    if n < 1:
        raise ContractError("n must be positive")
    h = 1.0 / n
    first = next(k for k in range(1, n + 1) if 3.0 - math.exp(k * h) < FLOOR)
    segs = []
    a0 = (first - 1) * h
    if a0 > 0:
        segs.append(Segment(0.0, a0, U_FALL, X0))
    switches = {}
    entry = 3.0 - math.exp(a0)
    for i in range(first, n + 1):
        a, b = (i - 1) * h, (i * h if i < n else 1.0)
        l = lq_switch_time((a, b), entry)
        switches[i] = l
        fall = Segment(a, l, U_FALL, entry)
        segs.append(fall)
        segs.append(Segment(l, b, U_RISE, fall.x_end))
        entry = FLOOR
    return LqSegments(tuple(segs), switches, n=n, derived_construction=n != WORKED_N)


def switching_table(sol):
    """Rows ``(i, l_i, residual)`` of the junction equations."""
    h = 1.0 / sol.n
    rows = []
    for i, l in sol.switch_times.items():
        a, b = (i - 1) * h, i * h if i < sol.n else 1.0
        entry = 3.0 - math.exp(a) if i == min(sol.switch_times) else FLOOR
        rows.append((i, l, abs(switch_residual(l, (a, b), entry))))
    return rows


def reference_betas_ok(betas, normalized=True):
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (6,):
        raise ContractError("expected six multipliers for t_1 .. t_6")
    if np.any(betas > 0):
        raise ContractError("multipliers beta^1..beta^6 must be nonpositive")
    if normalized and abs(float(np.sum(betas**2)) - 1.0) > 1e-9:
        raise ContractError("beta^1..beta^6 must have unit Euclidean norm when beta^0 = beta^7..10 = 0")
    return betas


def lq_reference_adjoint(betas, times=None, *, normalized=True):
    """Closed-form costate of the ``n = 10`` pair when only ``beta^1..beta^6``
    are nonzero: a backward exponential with jumps ``-beta^i`` at ``t_i``,
    identically zero on ``(0.6, 1]``."""
    betas = reference_betas_ok(betas, normalized)
    times = np.linspace(0.0, 1.0, 10_001) if times is None else np.asarray(times, dtype=float)
    grid = ConstraintGrid.uniform(WORKED_N, 1.0)
    p_at = np.zeros(WORKED_N + 1)
    for i in range(1, 7):
        p_at[i] = sum(-betas[j - 1] * math.exp(0.1 * (j - i)) for j in range(i, 7))
    # interval index with t in (t_{i-1}, t_i]; t = 0 joins the first interval
    idx = np.clip(np.searchsorted(np.asarray(grid.times) + 1e-12, times, side="left"), 1, WORKED_N)
    t_i = np.asarray(grid.times)[idx]
    values = p_at[idx] * np.exp(t_i - times)
    jumps = []
    for i in range(1, WORKED_N + 1):
        right = p_at[i + 1] * math.exp(0.1) if i < WORKED_N else 0.0
        left = p_at[i]
        jumps.append((grid.times[i], left, right, left - right))
    return AdjointPath(times, values, tuple(jumps), beta0=0.0, form="reference")


def write_reference(out_dir, resolution=1001):
    """CSV dumps of both closed-form pairs and the switching-time table."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = np.linspace(0.0, 1.0, resolution)
    written = []
    for name, sol in (("continuous", lq_continuous_optimum()), ("discrete_n10", lq_discrete_optimum(WORKED_N))):
        path = out / f"lq_{name}.csv"
        x = sol.state(t)
        u = sol.control()(t)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u"])
            w.writerows(zip(t.tolist(), x.tolist(), u.tolist()))
        written.append(path)
    path = out / "lq_switch_times.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "l_i", "residual"])
        for i, l, r in switching_table(lq_discrete_optimum(WORKED_N)):
            w.writerow([i, repr(l), repr(r)])
    written.append(path)
    return written
