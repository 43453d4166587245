import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ocsc import PiecewiseConstantControl, affine_problem, audit_control_monotonicity, lq_switch_time
from ocsc.lq import switch_residual
from ocsc.relax import DELTA_FEASIBLE, FEASIBLE, STRICT, classify_slacks, ekeland_value

slack = st.floats(-1.0, 1.0, allow_nan=False)
slack_lists = st.lists(slack, min_size=1, max_size=12)
delta = st.floats(0.0, 0.5, allow_nan=False)
FAST = settings(max_examples=60, deadline=None)


@FAST
@given(slack_lists, delta, delta)
def test_delta_feasibility_grows_with_delta(slacks, d1, d2):
    lo, hi = sorted((d1, d2))
    a, b = classify_slacks(slacks, lo), classify_slacks(slacks, hi)
    if a.belongs_to(DELTA_FEASIBLE):
        assert b.belongs_to(DELTA_FEASIBLE)
    assert a.is_feasible == b.is_feasible


@FAST
@given(slack_lists, delta)
def test_categories_nest(slacks, d):
    v = classify_slacks(slacks, d)
    if v.belongs_to(STRICT):
        assert v.belongs_to(FEASIBLE)
    if v.belongs_to(FEASIBLE):
        assert v.belongs_to(DELTA_FEASIBLE)
    assert v.worst_slack == min(slacks)


values = st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=6)


@st.composite
def controls(draw):
    vals = draw(values)
    cuts = sorted(draw(st.lists(st.floats(0.01, 0.99), min_size=len(vals) - 1, max_size=len(vals) - 1, unique=True)))
    bp = [0.0] + cuts + [1.0]
    if np.any(np.diff(bp) <= 1e-9):
        bp = np.linspace(0.0, 1.0, len(vals) + 1)
    return PiecewiseConstantControl(bp, vals)


@FAST
@given(controls(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_restrict_recovers_pointwise_values(u, a, b):
    a, b = sorted((a, b))
    r = u.restrict(a, b)
    if b - a < 1e-9:
        return
    t = np.linspace(a, b, 17)[:-1]
    assert np.array_equal(r(t), u(t))
    assert r.start == a and r.end == b


@FAST
@given(controls(), st.floats(0.0, 0.9), st.floats(0.01, 0.1), st.floats(-3, 3))
def test_override_changes_only_window(u, a, w, value):
    b = min(1.0, a + w)
    o = u.override(a, b, value)
    t = np.linspace(0, 1, 201)[:-1]
    inside = (t >= a) & (t < b)
    assert np.all(o(t[inside]) == value)
    assert np.array_equal(o(t[~inside]), u(t[~inside]))
    assert o.l1_distance(u) <= 6 * (b - a) + 1e-12


@FAST
@given(st.floats(0, 10), st.lists(slack, min_size=1, max_size=8), st.floats(1e-3, 1.0), st.floats(0, 10))
def test_ekeland_value_nonnegative(cost, slacks, theta, j_ref):
    v = float(ekeland_value(cost, slacks, theta, j_ref))
    assert v >= 0
    assert v >= max(0.0, cost - j_ref + theta) - 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 3), st.floats(-1, 1))
def test_monotonicity_bounds_ordered(a, b, q):
    p = affine_problem(a, b, q, 1.0, -1.0, 1.0, 0.5, 1.0, 0.0)
    rep = audit_control_monotonicity(p, 200)
    c1, c2 = rep.estimate
    assert c1 <= c2
    assert math.isclose(c1, b, rel_tol=1e-6) and math.isclose(c2, b, rel_tol=1e-6)


@FAST
@given(st.floats(0.0, 0.8), st.floats(0.05, 0.2), st.floats(1.0, 2.5))
def test_switch_time_root(a, length, entry):
    b = a + length
    # a root exists iff falling all the way ends below the floor and rising all the way ends above it
    if switch_residual(a, (a, b), entry) * switch_residual(b, (a, b), entry) > 0:
        return
    l = lq_switch_time((a, b), entry)
    assert a <= l <= b
    assert abs(switch_residual(l, (a, b), entry)) <= 1e-12
