import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from m2cmab.constrainer import (
    DualState, DualTrajectoryWriter, constant_step, default_step_size, dual_gradient, lagrangian_score, omd_step,
)
from m2cmab.core import BudgetVector

from oracles import eg_closed_form


def test_gradient_balanced_is_zero():
    b = BudgetVector(np.array([10.0, 20.0]))
    np.testing.assert_allclose(dual_gradient(np.array([1.0, 2.0]), b, 10), [0.0, 0.0], atol=1e-15)


def test_gradient_at_zero_cost():
    b = BudgetVector(np.array([10.0, 20.0]))
    np.testing.assert_allclose(dual_gradient(np.zeros(2), b, 8), [1 / 8, 1 / 8])


def test_gradient_hand_example():
    b = BudgetVector(np.array([10.0, 20.0]))
    np.testing.assert_allclose(dual_gradient(np.array([1.0, 1.0]), b, 10), [0.0, 0.05], atol=1e-15)


def test_interior_start():
    s = DualState.interior(3, 6.0, constant_step(1.0))
    np.testing.assert_allclose(s.lam, [1.0, 1.0, 1.0])
    assert s.slack == 3.0


def test_zero_gradient_leaves_state():
    s = DualState.interior(2, 4.0, constant_step(0.7))
    nxt = omd_step(s, np.zeros(2), 1)
    np.testing.assert_allclose(nxt.lam, s.lam, atol=1e-15)
    assert nxt.slack == pytest.approx(s.slack, abs=1e-15)


def test_single_dimension_closed_form():
    radius, rate = 9.0, 0.5
    s = DualState(np.array([radius / 2]), radius, radius / 2, constant_step(rate))
    nxt = omd_step(s, np.array([-math.log(2) / rate]), 1)
    assert nxt.lam[0] == pytest.approx(2 / 3 * radius, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 3, elements=st.floats(-50, 50)))
def test_zero_coordinates_stay_zero(g):
    s = DualState(np.array([0.0, 1.0, 2.0]), 5.0, 2.0, constant_step(0.3))
    nxt = omd_step(s, g, 1)
    assert nxt.lam[0] == 0.0
    nxt.check()


def test_monotone_pressure_until_saturation():
    s = DualState.interior(2, 1.0, constant_step(0.5))
    g = np.array([-1.0, 0.0])
    prev = s.lam[0]
    for t in range(200):
        s = omd_step(s, g, t)
        assert s.lam[0] > prev or s.lam[0] == pytest.approx(1.0, abs=1e-12)
        prev = s.lam[0]
    assert prev == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.floats(0.01, 100.0), st.floats(1e-3, 5.0), st.integers(0, 2**32 - 1))
def test_matches_exponentiated_gradient(C, radius, rate, seed):
    rng = np.random.default_rng(seed)
    grads = rng.uniform(-2, 2, size=(10, C))
    s = DualState.interior(C, radius, constant_step(rate))
    lam0, slack0 = s.lam.copy(), s.slack
    for k, g in enumerate(grads):
        s = omd_step(s, g, k)
        lam, slack = eg_closed_form(lam0, slack0, radius, rate, grads[:k + 1])
        assert np.max(np.abs(s.lam - lam)) <= 1e-9 * max(1.0, radius)
        assert abs(s.slack - slack) <= 1e-9 * max(1.0, radius)
        assert s.lam.sum() <= radius * (1 + 1e-12)


def test_huge_gradient_no_overflow():
    s = DualState.interior(2, 3.0, constant_step(1.0))
    nxt = omd_step(s, np.array([-1e6, 1e6]), 1)
    assert np.all(np.isfinite(nxt.lam))
    assert nxt.lam[0] == pytest.approx(3.0)


def test_score_zero_multiplier():
    s = DualState(np.zeros(2), 1.0, 1.0)
    b = BudgetVector(np.array([3.0, 4.0]))
    assert lagrangian_score(1.7, np.array([2.0, 5.0]), s, b, 10) == pytest.approx(1.7)


def test_score_hand_example():
    s = DualState(np.array([2.0]), 5.0, 3.0)
    b = BudgetVector(np.array([10.0]), ("latency",))
    assert lagrangian_score(1.0, np.array([2.0]), s, b, 10) == pytest.approx(0.8, abs=1e-12)


def test_score_on_pace_cost_is_reward():
    s = DualState(np.array([0.4, 3.0]), 5.0, 1.6)
    b = BudgetVector(np.array([10.0, 30.0]))
    assert lagrangian_score(2.5, b.totals / 20, s, b, 20) == pytest.approx(2.5, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), arrays(float, 2, elements=st.floats(0, 5)),
       arrays(float, 2, elements=st.floats(0, 5)), st.floats(-2, 2), st.floats(-2, 2))
def test_score_affine(r1, r2, c1, c2, a, b):
    s = DualState(np.array([0.5, 1.5]), 3.0, 1.0)
    budget = BudgetVector(np.array([2.0, 7.0]))
    f = lambda r, c: lagrangian_score(r, c, s, budget, 50)
    # affine: f(a x + b y) = a f(x) + b f(y) + (1 - a - b) f(0)
    lhs = f(a * r1 + b * r2, a * c1 + b * c2)
    rhs = a * f(r1, c1) + b * f(r2, c2) + (1 - a - b) * f(0.0, np.zeros(2))
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_default_step_size():
    assert default_step_size(2, 100, 0.5) == pytest.approx(math.sqrt(math.log(3) / 100) / 0.5)


def test_trajectory_writer():
    buf = io.StringIO()
    w = DualTrajectoryWriter(buf, 2)
    w.write(1, DualState.interior(2, 4.0, constant_step(1.0)))
    assert buf.getvalue().splitlines() == ["round,lambda_1,lambda_2,slack", "1,1.0,1.0,2.0"]
