"""Classical fourth-order Runge-Kutta kernels on a prescribed time grid.

Both kernels take a control value per step, so the caller is responsible for
placing every control discontinuity on a grid node.
"""

import math

import numpy as np

STEPS_PER_UNIT = 10_000


def default_steps(horizon):
    return max(1, math.ceil(STEPS_PER_UNIT * horizon))


def merge_grid(base, *extra, tol=1e-12):
    """Sorted union of `base` and `extra` times, dropping near-duplicates.

    Nodes of `base` win over extra times closer than ``tol * span``.
    """
    base = np.asarray(base, dtype=float)
    span = base[-1] - base[0]
    pts = [np.asarray(e, dtype=float).ravel() for e in extra if e is not None and np.size(e)]
    if not pts:
        return base
    cand = np.concatenate(pts)
    cand = cand[(cand > base[0]) & (cand < base[-1])]
    if cand.size == 0:
        return base
    idx = np.searchsorted(base, cand)
    lo = np.abs(cand - base[np.clip(idx - 1, 0, base.size - 1)])
    hi = np.abs(base[np.clip(idx, 0, base.size - 1)] - cand)
    keep = np.minimum(lo, hi) > tol * max(span, 1.0)
    merged = np.union1d(base, cand[keep])
    gaps = np.diff(merged)
    if np.any(gaps <= tol * max(span, 1.0)):
        merged = merged[np.concatenate([[True], gaps > tol * max(span, 1.0)])]
    return merged


def rk4_scalar(f, x0, times, uvals):
    """Integrate a scalar ODE; returns the state at every node as a list.

    Stops early and returns ``(states, k)`` with the index of the first
    non-finite node if the path blows up; otherwise ``(states, None)``.
    """
    x = float(x0)
    out = [x]
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        u = uvals[k]
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        x = float(x)
        if not math.isfinite(x):
            out.append(x)
            return out, k + 1
        out.append(x)
    return out, None


def rk4_batch(f, x0, times, uvals):
    """Integrate a batch of trajectories at once.

    ``x0`` has shape ``(B,)`` and ``uvals`` shape ``(B, M)``; returns an
    array of shape ``(B, M + 1)``. ``f`` must broadcast over numpy arrays.
    """
    x = np.array(x0, dtype=float, copy=True)
    uvals = np.asarray(uvals, dtype=float)
    steps = len(times) - 1
    out = np.empty((x.shape[0], steps + 1))
    out[:, 0] = x
    hs = np.diff(times)
    for k in range(steps):
        h = hs[k]
        u = uvals[:, k]
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        out[:, k + 1] = x
    return out


def hermite_midpoints(f, times, states, uvals):
    """Cubic Hermite estimate of the state at each step midpoint.

    Uses the ODE right-hand side as the node derivative, fourth-order
    accurate like the integrator that produced ``states``.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    uvals = np.asarray(uvals, dtype=float)
    h = np.diff(times)
    x0, x1 = states[:-1], states[1:]
    d0 = np.asarray(f(x0, uvals), dtype=float)
    d1 = np.asarray(f(x1, uvals), dtype=float)
    return 0.5 * (x0 + x1) + h * (d0 - d1) / 8.0
