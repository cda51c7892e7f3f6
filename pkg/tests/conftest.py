"""Shared builders for small hand-made traces."""

import numpy as np
import pytest

from m2cmab.bench.traces import GeneratorSpec, default_backends, generate_synthetic_trace
from m2cmab.core import BudgetVector, TaskContext, TaskRow, Trace


def make_trace(rewards, costs, contexts=None) -> Trace:
    """Trace from arrays: rewards (T, A), costs (T, A, C)."""
    rewards = np.asarray(rewards, dtype=float)
    costs = np.asarray(costs, dtype=float)
    T = rewards.shape[0]
    if contexts is None:
        contexts = np.linspace(0.0, 1.0, T)[:, None] * np.ones((1, 2))
    rows = [TaskRow(TaskContext(i, pooled_embedding=contexts[i]), rewards[i], costs[i]) for i in range(T)]
    return Trace(rows)


def huge_budget(n_costs=2) -> BudgetVector:
    return BudgetVector(np.full(n_costs, 1e12))


@pytest.fixture(scope="session")
def linear_trace():
    return generate_synthetic_trace(GeneratorSpec(400, noise=0.1), seed=3)


@pytest.fixture(scope="session")
def two_action_trace():
    return generate_synthetic_trace(GeneratorSpec(60, backends=default_backends()[:2]), seed=5)
