import math

import numpy as np
import pytest
from scipy.integrate import quad

from ocsc import (
    ConstraintGrid,
    ContractError,
    ControllabilityError,
    ControlProblem,
    PiecewiseConstantControl,
    SolverOptions,
    SurgeryFailed,
    classify_feasibility,
    control_surgery,
    ekeland_sequence,
    integrate_forward,
    lq_continuous_optimum,
    lq_problem,
    penalized_cost_n,
    penalized_cost_theta,
    reach_target,
    solve_discrete_constrained,
)
from ocsc.experiments import make_violator
from ocsc.relax import DELTA_FEASIBLE, FEASIBLE, INFEASIBLE, STRICT, classify_slacks, pair_distance

PCC = PiecewiseConstantControl
J_CONT = 8 * math.log(2) - 2.5


def pair_of(problem, control, grid, steps=None):
    return control, integrate_forward(problem, control, steps, knots=grid.times)


def test_continuous_optimum_is_feasible(lq, grid10):
    _, traj = pair_of(lq, lq_continuous_optimum().control(), grid10)
    v = classify_feasibility(traj, grid10, 1.0, 0.01)
    assert v.category == FEASIBLE and v.worst_slack == pytest.approx(0.0, abs=1e-9)


def test_constant_path_is_strict():
    p = ControlProblem(lambda x, u: 0 * x + u, lambda x, u: 0 * x, lambda x: 0 * x, (-1, 1), 1.0, 1.5, 1.0)
    grid = ConstraintGrid.uniform(4, 1.0)
    _, traj = pair_of(p, PCC.constant(0.0, 0.0, 1.0), grid)
    assert classify_feasibility(traj, grid, 1.0, 0.1).category == STRICT


def test_dip_between_constraint_times_is_invisible(lq):
    # fall then rise, back on the floor at t = 1 only
    grid = ConstraintGrid.uniform(1, 1.0)
    l = 1 - math.log((4 + (3 - 2) * math.e) / 6)
    u = PCC([0.0, l, 1.0], [-3.0, 3.0])
    _, traj = pair_of(lq, u, grid)
    assert traj.states.min() < 0.9
    assert classify_feasibility(traj, grid, 1.0, 0.01).is_feasible


def test_classification_categories():
    assert classify_slacks([0.5, -0.005], 0.01).category == DELTA_FEASIBLE
    assert classify_slacks([0.5, -0.02], 0.01).category == INFEASIBLE
    assert classify_slacks([0.5, 0.0], 0.0).category == FEASIBLE
    assert classify_slacks([0.5, -1e-10], 0.1).category == FEASIBLE
    with pytest.raises(ContractError):
        classify_slacks([0.0], -1.0)


def test_reach_target_extreme(lq):
    u = reach_target(lq, (0.0, 2.0), 1.0, 3 - math.e)
    assert u.values[0] == -3.0


def test_reach_target_hold(lq):
    u = reach_target(lq, (0.6, 1.0), 1.0, 1.0)
    assert u.values[0] == pytest.approx(-1.0, abs=1e-9)
    assert (u.start, u.end) == (0.6, 1.0)


def test_reach_target_zero_length(lq):
    assert reach_target(lq, (0.5, 1.0), 0.5, 1.0).is_empty
    with pytest.raises(ControllabilityError):
        reach_target(lq, (0.5, 1.0), 0.5, 2.0)


def test_reach_target_unreachable(lq):
    with pytest.raises(ControllabilityError):
        reach_target(lq, (0.9, 1.0), 1.0, 10.0)


def test_surgery_identity_on_feasible(lq, grid10, pair10):
    res = control_surgery(lq, pair10, grid10, 0.01)
    assert res.control is pair10[0]
    assert res.distance.total == 0.0 and res.repaired == ()


def test_surgery_rejects_infeasible_input(lq, grid10, pair10):
    bad = pair10[0].override(0.75, 0.95, -3.0)
    with pytest.raises(ContractError):
        control_surgery(lq, pair_of(lq, bad, grid10), grid10, 0.01)


@pytest.mark.parametrize("split", ["latest", "crossing"])
def test_surgery_repairs_violator(lq, grid10, pair10, split):
    rng = np.random.default_rng(5)
    bad = make_violator(lq, pair10[0], grid10, 0.01, rng)
    pair = pair_of(lq, bad, grid10)
    assert classify_feasibility(pair[1], grid10, 1.0, 0.01).category == DELTA_FEASIBLE
    res = control_surgery(lq, pair, grid10, 0.01, split=split)
    assert res.verdict.is_feasible and res.repaired
    d = pair_distance(lq, bad, res.control, knots=grid10.times)
    assert d.total == pytest.approx(res.distance.total, abs=1e-12)
    assert res.c_estimate == pytest.approx(res.distance.total / 0.1)


def test_surgery_latest_is_not_farther_than_crossing(lq, grid10, pair10):
    rng = np.random.default_rng(11)
    bad = make_violator(lq, pair10[0], grid10, 0.01, rng)
    pair = pair_of(lq, bad, grid10)
    late = control_surgery(lq, pair, grid10, 0.01, split="latest")
    cross = control_surgery(lq, pair, grid10, 0.01, split="crossing")
    assert late.distance.control_l1 <= cross.distance.control_l1 + 1e-9


def test_surgery_fails_without_control_authority():
    p = ControlProblem(lambda x, u: -x + 0 * u, lambda x, u: 0 * x, lambda x: 0 * x, (-1, 1), 1.0, 1.5, 1.0)
    grid = ConstraintGrid.uniform(1, 1.0)
    pair = pair_of(p, PCC.constant(0.0, 0.0, 1.0), grid)
    with pytest.raises(SurgeryFailed):
        control_surgery(p, pair, grid, 0.5)


def test_penalized_theta_at_reference(lq, grid10):
    u = lq_continuous_optimum().control()
    assert penalized_cost_theta(lq, u, grid10, 0.1, J_CONT) == pytest.approx(0.1, abs=1e-6)
    with pytest.raises(ContractError):
        penalized_cost_theta(lq, u, grid10, 0.0, J_CONT)


def test_penalized_zero_when_cheap_and_feasible(lq, grid10, pair10):
    # the n = 10 optimum is discretely feasible and cheaper than j_ref - theta
    assert penalized_cost_theta(lq, pair10[0], grid10, 0.1, 3.2) == pytest.approx(0.0, abs=1e-12)


def test_penalized_slack_only(lq):
    grid = ConstraintGrid.uniform(1, 1.0)
    u = PCC.constant(-3.0, 0.0, 1.0)
    # X(1) = 3 - e, violation e - 2; cost far below j_ref
    v = penalized_cost_theta(lq, u, grid, 0.1, 100.0)
    assert v == pytest.approx(math.e - 2, abs=1e-9)


def test_penalized_n_single_interval_matches_theta_one(lq):
    grid = ConstraintGrid.uniform(1, 1.0)
    u = PCC.constant(-1.0, 0.0, 1.0)
    assert penalized_cost_n(lq, u, grid, 2.0) == pytest.approx(penalized_cost_theta(lq, u, grid, 1.0, 2.0))


def test_penalized_n_weighting(lq):
    grid = ConstraintGrid.uniform(5, 1.0)
    u = PCC.constant(-3.0, 0.0, 1.0)
    plain = penalized_cost_n(lq, u, grid, 100.0)
    weighted = penalized_cost_n(lq, u, grid, 100.0, weighted=True)
    assert plain == pytest.approx(5 * weighted, rel=1e-12)


def constant_control_oracle(problem, values):
    # exact cost of constant controls under the affine drift, by quadrature
    best = math.inf
    for u in values:
        x = lambda t, u=u: -u + (problem.initial_state + u) * math.exp(t)
        j = quad(lambda t: x(t) ** 2, 0, 1)[0] + x(1.0) ** 2
        best = min(best, j)
    return best


def test_solver_beats_constant_controls_when_unconstrained():
    p = lq_problem(floor=-100.0)
    grid = ConstraintGrid.uniform(1, 1.0)
    res = solve_discrete_constrained(p, grid, 10, SolverOptions(random_starts=0, steps=2000))
    # trapezoid error at 2000 steps is below 1e-6
    assert res.cost <= constant_control_oracle(p, np.linspace(-3, 3, 601)) + 1e-6
    assert np.allclose(res.control.values, -3.0)
    assert res.verdict.is_feasible


@pytest.mark.slow
def test_solver_cost_monotone_in_floor():
    grid = ConstraintGrid.uniform(2, 1.0)
    opts = SolverOptions(random_starts=0, steps=2000)
    costs = [solve_discrete_constrained(lq_problem(floor=f), grid, 10, opts).cost for f in (0.8, 1.0, 1.2)]
    assert costs[0] < costs[1] < costs[2]


def test_solver_inactive_constraint():
    p = lq_problem(floor=0.0)
    grid = ConstraintGrid.uniform(1, 1.0)
    res = solve_discrete_constrained(p, grid, 10, SolverOptions(random_starts=0, steps=2000))
    # u = -3 ends at 3 - e > 0, so the floor never binds
    assert np.allclose(res.control.values, -3.0)
    assert res.verdict.worst_slack > 0.2
    assert res.to_dict()["n"] == 1


def test_ekeland_single_interval(lq):
    rec = ekeland_sequence(lq, [1], J_CONT, reference_control=lq_continuous_optimum().control(), steps=2000)[0]
    assert rec.passed
    assert rec.l2_distance <= 1.0 + 1e-9


def test_ekeland_rejects_bad_n(lq):
    with pytest.raises(ContractError):
        ekeland_sequence(lq, [10, 5], J_CONT)
