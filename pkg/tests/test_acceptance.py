"""Acceptance criteria 1-9, one PASS/FAIL line each.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest
from scipy.integrate import quad

from ocsc import evaluate_cost, integrate_forward, lq_continuous_optimum, lq_discrete_optimum, lq_problem
from ocsc.experiments import (
    run_ekeland_study,
    run_expansion,
    run_solver_check,
    run_step1_pmp,
    run_step2_gap,
    run_step3_monotone,
    run_surgery_study,
)
from ocsc.lq import switch_residual

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = []


def record(label, passed, detail):
    line = f"criterion {label}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def gates(rec, *names):
    return all(rec.find(n).passed for n in names), "  ".join(f"{n}={rec.find(n).value:.4g}" for n in names)


def test_criterion_1_continuous_cost():
    # quadrature oracle for the constant 8 ln 2 - 2.5
    ln2 = math.log(2)
    oracle = quad(lambda t: (3 - math.exp(t)) ** 2, 0, ln2, epsabs=1e-14)[0] + (1 - ln2) + 1.0
    assert abs(oracle - (8 * ln2 - 2.5)) < 1e-12
    start = time.perf_counter()
    lq = lq_problem()
    u = lq_continuous_optimum().control()
    traj = integrate_forward(lq, u, 10_000)
    cost = evaluate_cost(lq, traj, u)
    x_ln2 = traj.at(ln2)
    elapsed = time.perf_counter() - start
    ok = abs(cost - oracle) <= 1e-6 and abs(x_ln2 - 1.0) <= 1e-8 and elapsed < 1.0
    record("1", ok, f"|J-J*|={abs(cost - oracle):.2e} (<=1e-6)  |X(ln2)-1|={abs(x_ln2 - 1):.2e} (<=1e-8)  {elapsed:.3f}s (<1s)")


def test_criterion_2_switching_times():
    start = time.perf_counter()
    sol = lq_discrete_optimum(10)
    elapsed = time.perf_counter() - start
    worst, inside = 0.0, True
    for i in (7, 8, 9, 10):
        a, b = (i - 1) / 10, i / 10
        entry = 3 - math.exp(0.6) if i == 7 else 1.0
        l = sol.switch_times[i]
        worst = max(worst, abs(switch_residual(l, (a, b), entry)))
        inside &= a < l < b
    ok = worst <= 1e-12 and inside and elapsed < 0.1
    record("2", ok, f"max residual={worst:.2e} (<=1e-12)  strictly inside={inside}  {elapsed:.4f}s (<0.1s)")


@pytest.fixture(scope="module")
def step1():
    return run_step1_pmp(structure="reference")


def test_criterion_3a_pmp_certificate(step1):
    g = step1.find("pmp_violation")
    free = step1.metrics["fit_free"]
    record(
        "3a",
        g.passed,
        f"violation={g.value:.4g} (<= {g.tol:.3g}) with beta^0 = beta^7..10 = 0"
        f"  [active-set fit: beta0={free['beta0']:.3f}, violation={free['max_violation']:.2e}]",
    )


def test_criterion_3b_corruption_detected(step1):
    g = step1.find("corruption_detected")
    record("3b", g.passed, f"corrupted violation={g.value:.4g} (>1e-3)")


def test_criterion_4_rate():
    rec = run_step2_gap([10, 20, 40, 80], band=2.0)
    ok, detail = gates(rec, "gap_n_band", "sup_n_band")
    ok &= rec.wall_time < 30
    record("4", ok, f"{detail} (<=2)  {rec.wall_time:.2f}s (<30s)")


def test_criterion_5_monotone():
    rec = run_step3_monotone([10, 20, 40, 80], atol=1e-9)
    ok, detail = gates(rec, "ordering", "sup_decreases")
    record("5", ok, detail)


def test_criterion_6_surgery():
    rec = run_surgery_study([0.04, 0.01, 0.0025], seeds=16)
    ok, detail = gates(rec, "surgery_failures", "all_repaired_feasible", "ratio_bounded")
    bound = rec.find("ratio_bounded").tol
    record("6", ok, f"{detail} (ratio bound {bound:.4g})")


def test_criterion_7_ekeland():
    rec = run_ekeland_study((10, 40))
    rows = rec.table
    ok = rec.passed and all(r["slack_ok"] and r["cost_ok"] for r in rows)
    detail = "  ".join(f"n={r['n']}: min X={r['min_state']:.4f} gap={r['cost_gap']:.4f}" for r in rows)
    record("7", ok, detail)


def test_criterion_8_expansion():
    rec = run_expansion((1e-1, 1e-2, 1e-3))
    ok, detail = gates(rec, "sine_ratio_decreasing", "lq_remainder")
    record("8", ok, detail)


def test_criterion_9_solver():
    rec = run_solver_check((10,), tol=1e-3)
    row = rec.table[0]
    gap = abs(row["cost"] - lq_discrete_optimum(10).cost)
    record("9", rec.passed and gap <= 1e-3, f"|J_solver - J_closed|={gap:.2e} (<=1e-3)  {rec.wall_time:.1f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
