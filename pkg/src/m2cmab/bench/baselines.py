"""Comparison policies sharing the scheduler's environment and stopping rule.

Predictor-driven baselines go through the same initial phase as M2CMAB so
every policy starts from identically trained adapters.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ..core import RunLedger, TraceEnv
from ..predictor import OraclePredictor
from ..scheduler import BudgetedScheduler, SchedulerConfig

RATIO_EPS = 1e-12


class M2CMAB(BudgetedScheduler):
    name = "M2CMAB"


class RandomPolicy(BudgetedScheduler):
    """Uniform choice every round; no warm-up and no adapters needed."""

    name = "Random"
    uses_dual = False
    has_initial_phase = False

    def choose(self, row, pred_r, pred_c):
        return int(self.rng.integers(self.n_actions)), float("nan")

    def run_exploration_exploitation(self) -> RunLedger:
        # skip prediction entirely
        while self.t < self.config.horizon:
            row = self._next()
            action, _ = self.choose(row, None, None)
            if self._try_commit(row, action) is None:
                return self.ledger
            self._log_round(action, row, float("nan"))
        self.ledger.stop_reason = "horizon"
        return self.ledger


class _CheapestFirst(BudgetedScheduler):
    uses_dual = False
    cost_index = 0

    def choose(self, row, pred_r, pred_c):
        col = pred_c[:, self.cost_index]
        return int(np.argmin(col)), float(pred_r[int(np.argmin(col))])


class LatencyFirst(_CheapestFirst):
    name = "LatencyFirst"
    cost_index = 0


class MoneyFirst(_CheapestFirst):
    name = "MoneyFirst"
    cost_index = 1


class ThresholdBased(BudgetedScheduler):
    """Greedy on predicted reward per unit of budget-normalised cost, averaged over dimensions."""

    name = "ThresholdBased"
    uses_dual = False

    def choose(self, row, pred_r, pred_c):
        spend = np.mean(pred_c / self.config.budget.totals, axis=1)
        ratio = pred_r / np.maximum(spend, RATIO_EPS)
        a = int(np.argmax(ratio))
        return a, float(ratio[a])


class Optimal(BudgetedScheduler):
    """The M2CMAB loop fed with the true per-round rewards and costs."""

    name = "Optimal"

    def __init__(self, env, config, **kwargs):
        kwargs["predictor"] = OraclePredictor(env.n_actions, len(config.budget))
        super().__init__(env, config, **kwargs)


POLICIES = {cls.name: cls for cls in (RandomPolicy, LatencyFirst, MoneyFirst, ThresholdBased, Optimal, M2CMAB)}
ABLATIONS = {"ablate_reward": (0,), "ablate_latency": (1,), "ablate_money": (2,)}


def make_policy(policy: str, env: TraceEnv, config: SchedulerConfig, **kwargs) -> BudgetedScheduler:
    """Instantiate a policy by name; ablation names map to M2CMAB with randomised heads."""
    if policy in ABLATIONS:
        config = dataclasses.replace(config, ablate_heads=ABLATIONS[policy])
        sched = M2CMAB(env, config, **kwargs)
        sched.name = policy
        return sched
    try:
        cls = POLICIES[policy]
    except KeyError:
        raise ValueError(f"unknown policy {policy!r}; choose from {sorted(POLICIES) + sorted(ABLATIONS)}")
    return cls(env, config, **kwargs)


def run_baseline(policy: str, env: TraceEnv, config: SchedulerConfig, **kwargs) -> RunLedger:
    return make_policy(policy, env, config, **kwargs).run()
