import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_rl.law import (
    ACTION,
    WAITING,
    GridSignLaw,
    NoProjection,
    PiecewiseLinearBoundary,
    ThresholdLaw,
    admissibility_margin,
    boundary_from_above,
    classify,
    improved_law,
    projection_increment,
    threshold_law_from_table,
)
from singular_rl.model import AugmentedState
from singular_rl.oracle import q0_closed, q1_closed

B = 1.3536

finite = st.floats(-50, 50, allow_nan=False)
nonneg = st.floats(0, 50, allow_nan=False)


def closed_form_law(sol, **kw):
    return improved_law(lambda x, t, y: q0_closed(sol, x), lambda x, t, y: q1_closed(sol, x), **kw)


def test_classify_threshold():
    law = ThresholdLaw(B)
    assert classify(law, AugmentedState(0, 0, 0)) == WAITING
    assert classify(law, AugmentedState(2, 0, 0)) == ACTION
    # the boundary itself belongs to the closed action region
    assert classify(law, AugmentedState(B, 0, 0)) == ACTION


def test_classify_closed_form_sign_law(sol):
    law = closed_form_law(sol)
    for x in np.linspace(-3, 4, 141):
        if abs(x - sol.xhat) < 1e-6:
            continue
        expected = WAITING if x < sol.xhat else ACTION
        assert classify(law, AugmentedState(x, 0, 0)) == expected


def test_projection_threshold():
    law = ThresholdLaw(B)
    assert projection_increment(law, AugmentedState(3, 0, 0)) == pytest.approx(3 - B, abs=1e-15)
    assert projection_increment(law, AugmentedState(1, 0, 0)) == 0.0


def test_projection_sign_law_matches_xhat(sol):
    a = projection_increment(closed_form_law(sol), AugmentedState(3, 0, 0))
    assert abs(a - (3 - sol.xhat)) < 1e-6


def test_improved_law_of_true_q_has_boundary_xhat(sol):
    # interior probing at x + eps_int lands the projection eps_int inside
    law = closed_form_law(sol)
    assert abs(boundary_from_above(law, 5.0) - sol.xhat) < law.eps_int + 2 * law.tol


def test_pure_waiting_law():
    law = improved_law(lambda x, t, y: np.ones_like(x), lambda x, t, y: -np.ones_like(x))
    xs = np.linspace(-100, 100, 21)
    assert np.all(law.waiting(xs, 0.0, 0.0))
    assert projection_increment(law, AugmentedState(100, 0, 0)) == 0.0


def test_empty_waiting_region_raises_with_state():
    law = improved_law(lambda x, t, y: -np.ones_like(x), lambda x, t, y: -np.ones_like(x), a_max=50.0)
    with pytest.raises(NoProjection) as err:
        projection_increment(law, AugmentedState(1.0, 0.5, 0.25))
    assert err.value.state == AugmentedState(1.0, 0.5, 0.25)
    assert "1.0" in str(err.value)


def test_nonconstant_threshold_solves_along_ray():
    # b(t, y) = 1 - 0.5 y: landing solves x - a = 1 - 0.5 (y + a)
    law = ThresholdLaw(lambda t, y: 1.0 - 0.5 * np.asarray(y))
    x, y = 4.0, 0.0
    a = projection_increment(law, AugmentedState(x, 0, y))
    assert a == pytest.approx((x - 1.0 + 0.5 * y) / 0.5, abs=1e-10)


def test_piecewise_boundary_table_roundtrip():
    rows = [(0.0, 0.0, 1.0), (1.0, 0.0, 2.0), (2.0, 0.0, 2.0)]
    law = threshold_law_from_table(rows)
    assert float(law.b(0.5, 0.0)) == pytest.approx(1.5)
    np.testing.assert_allclose(law.to_table([0.0, 1.0, 2.0], [0.0]), rows)
    const = threshold_law_from_table([(0.0, 0.0, B)])
    assert const.constant and const.boundary == B


def test_piecewise_boundary_two_dimensional():
    tab = [(t, y, 1.0 + t + 2 * y) for t in (0.0, 1.0) for y in (0.0, 1.0)]
    bnd = PiecewiseLinearBoundary(tab)
    assert float(bnd(0.5, 0.5)) == pytest.approx(2.5)
    assert np.isfinite(bnd(5.0, 5.0))  # nearest-neighbour outside the hull


def test_admissibility_margin():
    assert admissibility_margin(ThresholdLaw(B), 0.0, [0.0, 1.0, 10.0]) == pytest.approx(B - 10.0)


@settings(max_examples=200, deadline=None)
@given(x=finite, y=nonneg, b=st.floats(-10, 10))
def test_constant_threshold_projection_is_exact(x, y, b):
    law = ThresholdLaw(b)
    assert projection_increment(law, AugmentedState(x, 0.0, y)) == max(0.0, x - b)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-5, 5), y=st.floats(0, 5))
def test_complementarity_and_minimality(x, y):
    law = ThresholdLaw(lambda t, yy: 1.0 + 0.3 * np.sin(np.asarray(yy)))
    s = AugmentedState(x, 0.0, y)
    a = projection_increment(law, s)
    if classify(law, s) == WAITING:
        assert a == 0.0
    if a > 1e-5:
        d = 1e-6
        assert classify(law, AugmentedState(x - a + d, 0.0, y + a - d)) == ACTION
        # landing point is on the closure of the waiting region
        assert x - a <= float(law.b(0.0, y + a)) + 1e-9


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-5, 1.3))
def test_threshold_waiting_region_is_open(x):
    law = ThresholdLaw(B)
    if classify(law, AugmentedState(x, 0, 0)) == WAITING:
        eps = min(1e-9, (B - x) / 2)
        assert classify(law, AugmentedState(x + eps, 0, 0)) == WAITING
        assert classify(law, AugmentedState(x - eps, 0, 0)) == WAITING


def test_grid_sign_law_zero_set_is_action():
    # q1 = 0 exactly at x = 0: points on the zero set are not interior
    law = GridSignLaw(lambda x, t, y: np.ones_like(x), lambda x, t, y: np.asarray(x, float))
    assert not bool(law.waiting(np.array(0.0), 0.0, 0.0))
    assert bool(law.waiting(np.array(-1e-3), 0.0, 0.0))
