import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import REF_C2, REF_LAMBDA2, REF_V1, REF_XHAT
from singular_rl.model import ExpCostParams
from singular_rl.oracle import (
    K2,
    hjb_residual,
    lambda1,
    per_threshold_derivs,
    per_threshold_value,
    pi_iterate,
    pi_map,
    q0_closed,
    q1_closed,
    shifted_solution,
    solve_benchmark,
    two_step_violations,
    value,
    value_derivs,
)


def test_reference_values(sol):
    assert abs(sol.xhat - REF_XHAT) < 1e-12
    assert abs(sol.lambda2 - REF_LAMBDA2) < 1e-14
    assert abs(sol.C2 - REF_C2) < 1e-13
    assert sol.K1 == pytest.approx(40 / 3, rel=1e-15)
    assert float(value(sol, 1.0)) == pytest.approx(REF_V1, rel=1e-13)


def test_structural_signs(sol):
    assert lambda1(sol) < 0 < sol.params.a < sol.lambda2
    assert sol.K1 > 0 and sol.C2 < 0


def test_zero_drift_root():
    s = solve_benchmark(ExpCostParams(0.0, 1.3, 0.1, 1.0, 0.1))
    assert s.lambda2 == pytest.approx(math.sqrt(2 * 0.1) / 1.3, rel=1e-14)


def test_doubling_c_shifts_boundary(bench_params):
    p2 = ExpCostParams(bench_params.mu, bench_params.sigma, bench_params.a, 2.0, bench_params.beta)
    shift = solve_benchmark(p2).xhat - solve_benchmark(bench_params).xhat
    assert shift == pytest.approx(math.log(2) / bench_params.a, abs=1e-12)


def test_smooth_fit(sol):
    _, Vx, Vxx = value_derivs(sol, np.nextafter(sol.xhat, -np.inf))
    assert abs(Vx - sol.params.c) < 1e-10
    assert abs(Vxx) < 1e-10
    h = 1e-5
    fd = (value(sol, sol.xhat + h) - value(sol, sol.xhat - h)) / (2 * h)
    assert abs(fd - sol.params.c) < 1e-6


def test_piecewise_zero_branches(sol):
    assert float(q0_closed(sol, sol.xhat + 1)) == 0.0
    assert float(q1_closed(sol, sol.xhat - 1)) == 0.0


def test_decay_at_minus_infinity(sol):
    # decay is e^{a x} with a = 0.1, so V(-50) is still ~ K1 e^{-5}
    assert 0 < float(value(sol, -500.0)) < 1e-10
    assert float(value(sol, -50.0)) == pytest.approx(sol.K1 * math.exp(-5.0), rel=1e-4)
    x = -30.0
    assert float(value(sol, x)) == pytest.approx(sol.K1 * math.exp(sol.params.a * x), rel=1e-3)


@pytest.mark.parametrize("f", [value, q0_closed, q1_closed])
def test_continuity_at_boundary(sol, f):
    left = float(f(sol, np.nextafter(sol.xhat, -np.inf)))
    right = float(f(sol, sol.xhat))
    assert abs(left - right) < 1e-10


def test_q_functions_complementary(sol):
    x = np.linspace(-10, 10, 2001)
    q0, q1 = q0_closed(sol, x), q1_closed(sol, x)
    assert np.all(q0 >= -1e-12)
    assert np.max(np.abs(np.minimum(q0, q1))) < 1e-10


def test_per_threshold_at_xhat_is_value(sol):
    x = np.linspace(-10, 10, 1001)
    np.testing.assert_allclose(per_threshold_value(sol, sol.xhat, x), value(sol, x), rtol=0, atol=1e-10)
    assert K2(sol, sol.xhat) == pytest.approx(sol.C2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(xbar=st.floats(-3, 6))
def test_per_threshold_fit_at_xbar(sol, xbar):
    left = per_threshold_derivs(sol, xbar, np.nextafter(xbar, -np.inf))
    right = per_threshold_derivs(sol, xbar, xbar)
    assert abs(float(left[0] - right[0])) < 1e-9
    assert abs(float(left[1] - right[1])) < 1e-9


def test_positive_K2_only_left_of_xhat(sol):
    for xbar in np.linspace(-5, 6, 221):
        if K2(sol, xbar) >= 0:
            assert xbar < sol.xhat


@settings(max_examples=40, deadline=None)
@given(xbar=st.floats(-3, 6).filter(lambda v: abs(v - 1.3536) > 1e-3))
def test_optimal_value_is_lowest(sol, xbar):
    x = np.linspace(-5, 8, 131)
    assert np.all(per_threshold_value(sol, xbar, x) >= value(sol, x) - 1e-10)


def test_pi_fixed_point(sol):
    assert abs(pi_map(sol, sol.xhat) - sol.xhat) < 1e-9


def test_pi_from_three(sol):
    xs = pi_iterate(sol, 3.0, max_iter=100)
    assert np.any(np.abs(xs - sol.xhat) < 1e-6)
    assert abs(xs[-1] - sol.xhat) < 1e-9


@pytest.mark.parametrize("xbar", [1.5, 2.0, 3.0, 5.0])
def test_case_one_overshoots(sol, xbar):
    assert pi_map(sol, xbar) < sol.xhat


@pytest.mark.parametrize("xbar", [-2.0, 0.0, 1.0])
def test_below_xhat_maps_above(sol, xbar):
    assert pi_map(sol, xbar) > sol.xhat


@pytest.mark.parametrize("x0", [-2.0, 0.0, 0.5, 3.0, 5.0])
def test_two_step_decrease(sol, x0):
    assert two_step_violations(sol, pi_iterate(sol, x0, 100)) == []


def test_hjb_residual_small(sol):
    grid = np.round(np.arange(-500, 501) * 0.01, 12)
    grid = grid[grid != round(sol.xhat, 2)]
    res, _ = hjb_residual(sol, grid)
    assert res < 1e-8


def test_hjb_detects_misplaced_boundary(sol):
    grid = np.round(np.arange(-500, 501) * 0.01, 12)
    res, where = hjb_residual(shifted_solution(sol, sol.xhat + 0.1), grid)
    assert res > 1e-3
    assert -5 <= where <= 5


def test_waiting_branch_solves_ode(sol):
    p = sol.params
    x = np.linspace(-5, sol.xhat - 1e-6, 500)
    V, Vx, Vxx = value_derivs(sol, x)
    gen = np.exp(p.a * x) - p.beta * V + p.mu * Vx + 0.5 * p.sigma**2 * Vxx
    assert np.max(np.abs(gen)) < 1e-12


def test_residual_of_per_threshold_value_is_not_zero(sol):
    grid = np.linspace(-5, 5, 1001)
    assert hjb_residual(sol, grid, xbar=sol.xhat + 0.5)[0] > 1e-4
