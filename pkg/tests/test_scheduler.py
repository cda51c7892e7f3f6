import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from m2cmab.core import BudgetVector, TraceEnv
from m2cmab.predictor import OraclePredictor
from m2cmab.scheduler import (
    BudgetedScheduler, SchedulerConfig, dual_radius, estimation_margin, run_full, run_trace, sampling_distribution,
    t0_from_ratio,
)

from conftest import huge_budget, make_trace


def test_rho_zero_is_uniform():
    d = sampling_distribution(np.array([3.0, -1.0, 0.5, 7.0, 2.0]), 0.0)
    np.testing.assert_allclose(d.probabilities, 0.2, atol=1e-15)


def test_two_arm_hand_example():
    d = sampling_distribution(np.array([1.0, 0.0]), 8.0)
    assert d.argmax_action == 0
    np.testing.assert_allclose(d.probabilities, [0.9, 0.1], atol=1e-12)


def test_equal_scores_uniform_and_lowest_id_wins():
    d = sampling_distribution(np.full(4, 2.5), 100.0)
    np.testing.assert_allclose(d.probabilities, 0.25, atol=1e-15)
    assert d.argmax_action == 0


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(2, 8), elements=st.floats(-100, 100)), st.floats(0, 1e6))
def test_distribution_valid(scores, rho):
    d = sampling_distribution(scores, rho)
    p = d.probabilities
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(p >= 0) and np.all(p <= 1)
    assert p[d.argmax_action] >= p.max() - 1e-12


def test_margin_with_zero_errors():
    T, C, T0 = 1000, 2, 7
    assert estimation_margin(5, 0.0, 0.0, T, C, T0) == pytest.approx(math.sqrt(4 * math.log(T * C) / T0), abs=1e-12)


def test_margin_error_terms():
    # A (E_r + d E_c) with d = C
    got = estimation_margin(3, 0.2, 0.1, 50, 2, 5)
    assert got == pytest.approx(math.sqrt(3 * (0.2 + 2 * 0.1) + 4 * math.log(100) / 5), abs=1e-12)


def test_radius_hand_example():
    assert dual_radius(100, 50.0, 2.0, 0.5) == pytest.approx(5.0, abs=1e-12)
    cfg = SchedulerConfig(100, 2, BudgetVector(np.array([50.0, 80.0])), phi_min_mode="min_budget")
    assert dual_radius(100, cfg.phi_min(), 2.0, 0.5) == pytest.approx(5.0, abs=1e-12)


def test_phi_min_modes():
    b = BudgetVector(np.array([4.0, 10.0]))
    assert SchedulerConfig(10, 1, b, phi_min_mode="literal").phi_min() == 0.25
    assert SchedulerConfig(10, 1, b).phi_min() == 1.0


def test_t0_from_ratio():
    assert t0_from_ratio(0.05, 2000, 5) == round(100 / 6)
    assert t0_from_ratio(0.001, 10, 5) == 1


def test_initial_phase_counts(linear_trace):
    sched = BudgetedScheduler(TraceEnv(linear_trace), SchedulerConfig(200, 10, huge_budget()))
    init = sched.run_initial_phase()
    assert len(init.history) == 60
    stage_one = Counter(r.action_id for r in init.history[:50])
    assert stage_one == {a: 10 for a in range(5)}
    assert init.Lambda == pytest.approx(200 / 1.0 * (init.opt_hat + init.M_T0), rel=1e-9)


def test_oracle_margin_has_no_error_term(linear_trace):
    cfg = SchedulerConfig(300, 4, huge_budget())
    sched = BudgetedScheduler(TraceEnv(linear_trace), cfg, predictor=OraclePredictor(5, 2))
    init = sched.run_initial_phase()
    assert init.errors == (0.0, 0.0)
    assert init.M_T0 == pytest.approx(math.sqrt(4 * math.log(300 * 2) / 4), abs=1e-12)


def test_tiny_instance_runs_to_horizon(two_action_trace):
    ledger = run_full(TraceEnv(two_action_trace), SchedulerConfig(12, 2, huge_budget()))
    assert ledger.rounds_executed == 12
    assert ledger.stop_reason == "horizon"


def test_seeds_change_order_not_counts(two_action_trace):
    orders = []
    for seed in (0, 1, 2, 3):
        sched = BudgetedScheduler(TraceEnv(two_action_trace), SchedulerConfig(40, 6, huge_budget(), seed=seed))
        init = sched.run_initial_phase()
        first = [r.action_id for r in init.history[:12]]
        assert Counter(first) == {0: 6, 1: 6}
        orders.append(tuple(first))
    assert len(set(orders)) > 1


def test_huge_budget_plays_every_round(linear_trace):
    cfg = SchedulerConfig(150, 3, huge_budget())
    sched = run_trace(linear_trace, cfg)
    ledger = sched.ledger
    assert ledger.rounds_executed == 150
    ee = [r for r in ledger.decision_log if r[0] > cfg.initial_rounds(5)]
    assert len(ee) == 150 - 18


def test_budget_boundary_stops_after_first_post_initial_round():
    rng = np.random.default_rng(0)
    T, A, T0 = 40, 3, 2
    rewards = rng.uniform(1, 5, size=(T, A))
    costs = np.broadcast_to(np.array([1.0, 0.5]), (T, A, 2)).copy()  # same cost for every action
    trace = make_trace(rewards, costs)
    k = (A + 1) * T0 + 1
    budget = BudgetVector(np.array([1.0 * k, 0.5 * k]))
    ledger = run_full(TraceEnv(trace), SchedulerConfig(T, T0, budget))
    assert ledger.rounds_executed == k
    assert ledger.stop_reason == "latency_budget"
    assert np.all(ledger.consumed <= budget.totals)


def test_single_action_rejected():
    trace = make_trace(np.ones((10, 1)), np.ones((10, 1, 2)))
    with pytest.raises(ValueError, match="two actions"):
        BudgetedScheduler(TraceEnv(trace), SchedulerConfig(10, 1, huge_budget()))


def test_initial_phase_must_fit_horizon(linear_trace):
    with pytest.raises(ValueError):
        SchedulerConfig(12, 2, huge_budget()).validate(5)


def test_determinism(linear_trace):
    budget = BudgetVector(np.array([300.0, 0.05]))
    a = run_trace(linear_trace, SchedulerConfig(300, 3, budget, seed=9)).ledger
    b = run_trace(linear_trace, SchedulerConfig(300, 3, budget, seed=9)).ledger
    assert a.decision_log == b.decision_log


def test_dual_feasible_and_budget_safe(linear_trace):
    budget = BudgetVector(linear_trace.cost_tensor().sum(axis=0).min(axis=0) * 0.6)
    sched = run_trace(linear_trace, SchedulerConfig(400, 3, budget, seed=2), record_rounds=True)
    assert sched.dual_log
    for _t, lam, slack in sched.dual_log:
        assert np.all(lam >= 0)
        assert lam.sum() <= sched.init.Lambda * (1 + 1e-9)
        assert lam.sum() + slack == pytest.approx(sched.init.Lambda, rel=1e-9)
    assert np.all(sched.ledger.consumed <= budget.totals)
    sched.ledger.check()
    # history grows by one record per executed round
    assert len(sched.history) == sched.ledger.rounds_executed


def test_uncharged_initial_phase(linear_trace):
    budget = BudgetVector(np.array([1e9, 1e9]))
    sched = run_trace(linear_trace, SchedulerConfig(100, 2, budget, charge_initial=False))
    first = sched.ledger.decision_log[0]
    assert first[3] == (0.0, 0.0)
