import numpy as np
import pytest

from ocsc import (
    ConstraintGrid,
    ContractError,
    ControlProblem,
    PiecewiseConstantControl,
    evaluate_cost,
    integrate_forward,
    integrate_variational,
    simulate,
    spike_variation,
)
from ocsc.integrate import read_control_csv, write_control_csv, write_trajectory_csv

PCC = PiecewiseConstantControl


def const(value, T=1.0):
    return PCC.constant(value, 0.0, T)


def test_fall_matches_closed_form(lq):
    traj = integrate_forward(lq, const(-3.0))
    assert np.max(np.abs(traj.states - (3.0 - np.exp(traj.times)))) < 1e-10


def test_zero_drift_is_constant():
    p = ControlProblem(lambda x, u: 0.0 * x, lambda x, u: 0 * x, lambda x: 0 * x, (-1, 1), 0.0, 0.7, 2.0)
    traj = integrate_forward(p, const(0.5, 2.0), 10)
    assert np.all(traj.states == 0.7)


def test_free_growth(lq):
    traj = integrate_forward(lq, const(0.0))
    assert traj.states[-1] == pytest.approx(2 * np.e, abs=1e-10)


def test_rk4_order(lq):
    errs = []
    for steps in (8, 16, 32, 64):
        traj = integrate_forward(lq, const(-3.0), steps)
        errs.append(abs(traj.states[-1] - (3 - np.e)))
    slopes = -np.diff(np.log(errs)) / np.log(2)
    assert np.all(slopes > 3.8) and np.all(slopes < 4.2)


def test_cost_linear_terminal():
    p = ControlProblem(lambda x, u: x + u, lambda x, u: 0 * x, lambda x: x, (-3, 3), 1.0, 2.0, 1.0)
    _, cost = simulate(p, const(-3.0))
    assert cost == pytest.approx(3 - np.e, abs=1e-10)


def test_breakpoints_become_nodes(lq):
    u = PCC([0.0, 0.123456, 1.0], [-3.0, 1.0])
    traj = integrate_forward(lq, u, 100)
    assert traj.index_of(0.123456) > 0
    with pytest.raises(ContractError):
        traj.index_of(0.1234)


def test_cost_rejects_foreign_grid(lq):
    traj = integrate_forward(lq, const(-3.0), 100)
    with pytest.raises(ContractError):
        evaluate_cost(lq, traj, PCC([0.0, 0.12345, 1.0], [-3.0, 1.0]))


def test_admissibility(lq):
    with pytest.raises(ContractError):
        integrate_forward(lq, const(4.0))
    with pytest.raises(ContractError):
        integrate_forward(lq, PCC.constant(0.0, 0.0, 0.5))


def test_left_continuous_evaluation():
    u = PCC([0.0, 0.5, 1.0], [1.0, 2.0])
    assert u(0.5) == 2.0 and u(0.4999) == 1.0 and u(1.0) == 2.0


def test_spike_below_min_width_is_identity():
    base = const(-3.0)
    assert spike_variation(base, 0.2, 1e-14, 3.0) is base


def test_spike_window_half_open():
    s = spike_variation(const(-3.0), 0.2, 0.05, 3.0)
    assert s(0.2) == 3.0 and s(0.2499) == 3.0 and s(0.25) == -3.0 and s(0.1999) == -3.0


def test_spike_rejects_crossing_constraint_time():
    grid = ConstraintGrid.uniform(10, 1.0)
    with pytest.raises(ContractError):
        spike_variation(const(-3.0), 0.25, 0.1, 3.0, grid=grid)
    spike_variation(const(-3.0), 0.2, 0.1, 3.0, grid=grid)


def test_spike_rejects_outside_control_set():
    with pytest.raises(ContractError):
        spike_variation(const(-3.0), 0.2, 0.1, 5.0, bounds=(-3.0, 3.0))


def test_variational_equation_shape(lq):
    base = const(-3.0)
    pair = (base, integrate_forward(lq, base))
    var = integrate_variational(lq, pair, spike_variation(base, 0.4, 0.01, 3.0), steps=2000)
    before = var.times < 0.4
    after = var.times >= 0.41
    assert np.all(var.values[before] == 0.0)
    assert np.all(var.values[after] > 0)
    # linear drift: y = (replacement - base) * (e^{t-v} - e^{t-v-eps}) after the window
    t = var.times[after]
    assert np.allclose(var.values[after], 6 * (np.exp(t - 0.4) - np.exp(t - 0.41)), atol=1e-9)


def test_variational_scales_with_epsilon(lq):
    base = const(-3.0)
    pair = (base, integrate_forward(lq, base))
    peaks = [
        np.max(np.abs(integrate_variational(lq, pair, spike_variation(base, 0.3, e, 3.0), 4000).values))
        for e in (0.02, 0.01)
    ]
    assert peaks[1] / peaks[0] == pytest.approx(0.5, rel=0.05)


def test_cost_change_linear_in_epsilon(lq):
    base = const(-3.0)
    j0 = simulate(lq, base)[1]
    diffs = [simulate(lq, spike_variation(base, 0.3, e, 3.0))[1] - j0 for e in (1e-3, 5e-4)]
    assert diffs[1] / diffs[0] == pytest.approx(0.5, rel=1e-2)


def test_restrict_and_override():
    u = PCC([0.0, 0.3, 0.7, 1.0], [1.0, 2.0, 3.0])
    r = u.restrict(0.2, 0.8)
    assert r.allclose(PCC([0.2, 0.3, 0.7, 0.8], [1.0, 2.0, 3.0]))
    o = u.override(0.3, 0.7, 1.0)
    assert o.allclose(PCC([0.0, 0.7, 1.0], [1.0, 3.0]))
    assert u.restrict(0.5, 0.5).is_empty


def test_distances():
    a, b = const(0.0), PCC([0.0, 0.25, 1.0], [2.0, 0.0])
    assert a.l1_distance(b) == pytest.approx(0.5)
    assert a.l2_distance(b) == pytest.approx(1.0)


def test_csv_roundtrip(tmp_path, lq):
    u = PCC([0.0, 0.3, 1.0], [-3.0, 1.5])
    write_control_csv(tmp_path / "u.csv", u)
    assert read_control_csv(tmp_path / "u.csv").allclose(u, atol=0)
    write_trajectory_csv(tmp_path / "x.csv", integrate_forward(lq, u, 10))
    assert (tmp_path / "x.csv").read_text().splitlines()[0] == "t,x"
