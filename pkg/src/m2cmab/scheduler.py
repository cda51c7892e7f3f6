"""Two-phase budgeted contextual bandit scheduler.

The initial phase plays every action ``T0`` times, then ``T0`` uniformly random
rounds, fits the adapters and sizes the dual radius from a plug-in LP. The
exploration-exploitation phase scores actions by their predicted Lagrangian,
samples with inverse-gap weights and moves the multipliers by a mirror step.

A round is committed only if its realised cost keeps every cumulative
dimension within budget; otherwise the run ends there.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import lp
from .constrainer import DualState, constant_step, default_step_size, dual_gradient, lagrangian_score, omd_step
from .core import (ActionSpec, BudgetVector, EnvironmentExhausted, ObservationRecord, RunLedger, TaskRow, Trace,
                   TraceEnv, one_hot_actions)
from .embed import context_embedding
from .predictor import OraclePredictor, PredictorBank

log = logging.getLogger(__name__)

PHI_MIN_MODES = ("min_budget", "literal", "normalized")


@dataclass
class SchedulerConfig:
    horizon: int
    T0: int
    budget: BudgetVector
    rho: float | None = None  # None: sqrt(A * rounds after the initial phase)
    seed: int = 0
    refit_every: int = 1
    reg_coeff: float = 1e-3
    interactions: bool = False  # add action x context features to the adapters
    step_size: float | None = None  # None: default_step_size with the observed gradient bound
    step_scale: float = 20.0  # multiplies the worst-case step size, which moves lambda too slowly
    phi_min_mode: str = "normalized"
    cost_units: str = "pace"  # units of E_c and the plug-in LP: pace (T * phi / Phi) or raw
    charge_initial: bool = True
    dual_gradient_source: str = "realized"  # or "predicted"
    reanchor_after_initial: bool = False
    lp_allow_skip: bool = True
    normalize_attention: bool = False
    ablate_heads: tuple[int, ...] = ()  # heads replaced by random predictors after Stage I (0 = reward)

    def validate(self, n_actions: int) -> None:
        if n_actions < 2:
            raise ValueError("at least two actions are required")
        if self.horizon < 1 or self.T0 < 1:
            raise ValueError("horizon and T0 must be positive")
        if not (n_actions + 1) * self.T0 < self.horizon:
            raise ValueError(f"initial phase ({(n_actions + 1) * self.T0} rounds) must be shorter "
                             f"than the horizon {self.horizon}")
        if self.rho is not None and self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.refit_every < 1:
            raise ValueError("refit_every must be positive")
        if self.phi_min_mode not in PHI_MIN_MODES:
            raise ValueError(f"phi_min_mode must be one of {PHI_MIN_MODES}")
        if self.cost_units not in ("pace", "raw"):
            raise ValueError("cost_units must be 'pace' or 'raw'")
        if self.dual_gradient_source not in ("realized", "predicted"):
            raise ValueError("dual_gradient_source must be 'realized' or 'predicted'")
        if any(not 0 <= h <= len(self.budget) for h in self.ablate_heads):
            raise ValueError(f"ablate_heads entries must lie in [0, {len(self.budget)}]")

    def initial_rounds(self, n_actions: int) -> int:
        return (n_actions + 1) * self.T0

    def cost_scale(self) -> np.ndarray:
        """Multiplier taking raw costs to the units used for E_c and the plug-in LP."""
        if self.cost_units == "pace":
            return self.horizon / self.budget.totals
        return np.ones(len(self.budget))

    def phi_min(self) -> float:
        if self.phi_min_mode == "normalized":
            return 1.0
        return self.budget.phi_min(literal=self.phi_min_mode == "literal")


def t0_from_ratio(ratio: float, horizon: int, n_actions: int) -> int:
    """Per-action initial plays so that ``(A + 1) * T0`` is about ``ratio * T``."""
    return max(1, int(round(ratio * horizon / (n_actions + 1))))


@dataclass
class InitialPhaseResult:
    Lambda: float
    opt_hat: float
    M_T0: float
    history: list[ObservationRecord]
    errors: tuple[float, float] = (0.0, 0.0)
    grad_bound: float = 0.0


@dataclass
class ActionDistribution:
    probabilities: np.ndarray
    argmax_action: int

    def __post_init__(self):
        p = self.probabilities
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12) or abs(p.sum() - 1.0) > 1e-9:
            raise AssertionError(f"invalid action distribution {p}")


def estimation_margin(n_actions: int, err_reward: float, err_cost: float, horizon: int, n_costs: int,
                      T0: int, d: int | None = None) -> float:
    """``sqrt(A (E_r + d E_c) + 4 log(T C) / T0)`` with ``d`` defaulting to ``C``."""
    d = n_costs if d is None else d
    return math.sqrt(n_actions * (err_reward + d * err_cost) + 4.0 * math.log(horizon * n_costs) / T0)


def scaled_holdout_error(pred_r: np.ndarray, pred_c: np.ndarray, held_out: Sequence[ObservationRecord],
                         scale: np.ndarray) -> tuple[float, float]:
    """Holdout errors of the played actions with costs multiplied by ``scale`` per dimension."""
    idx = np.arange(len(held_out))
    acts = np.array([rec.action_id for rec in held_out])
    rewards = np.array([rec.reward for rec in held_out])
    costs = np.array([rec.cost.values for rec in held_out])
    err_r = float(np.mean((pred_r[idx, acts] - rewards) ** 2))
    err_c = float(np.mean(((pred_c[idx, acts] - costs) * scale) ** 2))
    return err_r, err_c


def dual_radius(horizon: int, phi_min: float, opt_hat: float, margin: float) -> float:
    return horizon / phi_min * (opt_hat + margin)


def sampling_distribution(scores: np.ndarray, rho: float) -> ActionDistribution:
    """Inverse-gap weights: non-best arms get ``1 / (A + rho * gap)``, the best arm the rest."""
    scores = np.asarray(scores, dtype=float)
    A = scores.shape[0]
    best = int(np.argmax(scores))  # lowest id among ties
    probs = 1.0 / (A + rho * (scores[best] - scores))
    probs[best] = 0.0
    others = probs.sum()
    if others > 1.0 + 1e-12:
        raise AssertionError("non-best probabilities exceed one")
    probs[best] = 1.0 - others
    return ActionDistribution(probs, best)


def _draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, probs.shape[0] - 1)


class BudgetedScheduler:
    """One run of the two-phase policy over a trace environment.

    Subclasses change ``choose`` (the per-round decision) and
    ``uses_dual``; everything else, including the initial phase and the
    hard-stop accounting, is shared so baselines are compared on equal terms.
    """

    name = "M2CMAB"
    uses_dual = True
    has_initial_phase = True

    def __init__(self, env: TraceEnv, config: SchedulerConfig, actions: Sequence[ActionSpec] | None = None,
                 predictor=None, record_rounds: bool = False):
        self.env = env
        self.config = config
        self.n_actions = env.n_actions
        self.n_costs = len(config.budget)
        config.validate(self.n_actions)
        if len(env.trace) < config.horizon:
            raise EnvironmentExhausted(f"trace has {len(env.trace)} tasks, horizon is {config.horizon}")
        self.actions = list(actions) if actions is not None else one_hot_actions(self.n_actions)
        if predictor is None:
            d_ctx = context_embedding(env.trace.rows[0].context, config.normalize_attention).shape[0]
            predictor = PredictorBank(self.actions, d_ctx, self.n_costs, config.reg_coeff,
                                      config.normalize_attention, config.interactions)
        self.predictor = predictor
        self.rng = np.random.default_rng(config.seed)
        self.ledger = RunLedger(self.n_costs)
        self.history: list[ObservationRecord] = []
        self.init: InitialPhaseResult | None = None
        self.dual: DualState | None = None
        self.rho = config.rho
        self.round_log: list[list] | None = [] if record_rounds else None
        self.dual_log: list[tuple[int, np.ndarray, float]] = []
        self.t = 0  # rounds drawn from the environment

    # bookkeeping ---------------------------------------------------------

    def _try_commit(self, row: TaskRow, action: int, charge: bool = True) -> ObservationRecord | None:
        cost = row.costs[action]
        if charge:
            violation = self.ledger.first_violation(cost, self.config.budget)
            if violation is not None:
                log.debug("round %d: %s would be exceeded, stopping", self.t, violation)
                self.ledger.stop_reason = violation
                return None
            self.ledger.commit(self.t, action, float(row.rewards[action]), cost)
        else:
            self.ledger.rounds_executed += 1
            self.ledger.reward_sum += float(row.rewards[action])
            self.ledger.decision_log.append((self.t, int(action), float(row.rewards[action]),
                                             tuple(0.0 for _ in cost)))
        rec = row.observe(action)
        self.history.append(rec)
        assert len(self.history) == self.t
        return rec

    def _next(self) -> TaskRow:
        row = self.env.next_task()
        self.t += 1
        return row

    def _log_round(self, action: int, row: TaskRow, score_max: float):
        if self.round_log is None:
            return
        lam = self.dual.lam.tolist() if self.dual is not None else [float("nan")] * self.n_costs
        self.round_log.append([self.t, action, float(row.rewards[action]), *row.costs[action].tolist(),
                               *lam, score_max])

    # initial phase -------------------------------------------------------

    def run_initial_phase(self) -> InitialPhaseResult | None:
        cfg = self.config
        A, T0 = self.n_actions, cfg.T0
        charge = cfg.charge_initial
        stage_one = np.concatenate([self.rng.permutation(A) for _ in range(T0)])
        for a in stage_one:
            row = self._next()
            rec = self._try_commit(row, int(a), charge)
            if rec is None:
                return None
            self._log_round(int(a), row, float("nan"))
            self.predictor.observe(rec)
        self.predictor.refit()
        if cfg.ablate_heads:
            # separate stream so ablation does not perturb the action draws
            ablation_rng = np.random.default_rng([cfg.seed, 7919])
            for head in cfg.ablate_heads:
                self.predictor.randomize_head(head, ablation_rng)

        held_out: list[ObservationRecord] = []
        pred_r = np.empty((T0, A))
        pred_c = np.empty((T0, A, self.n_costs))
        for k in range(T0):
            a = int(self.rng.integers(A))
            row = self._next()
            rec = self._try_commit(row, a, charge)
            if rec is None:
                return None
            self._log_round(a, row, float("nan"))
            pred_r[k], pred_c[k] = self.predictor.predict_row(row)
            held_out.append(rec)
        scale = cfg.cost_scale()
        err_r, err_c = scaled_holdout_error(pred_r, pred_c, held_out, scale)
        for rec in held_out:
            self.predictor.observe(rec)
        self.predictor.refit()
        if cfg.reanchor_after_initial:
            self.predictor.reanchor()

        margin = estimation_margin(A, err_r, err_c, cfg.horizon, self.n_costs, T0)
        if self.uses_dual:
            lp_budget = BudgetVector(cfg.budget.totals * scale, cfg.budget.names)
            sol = lp.solve(lp.opt_hat_lp(pred_r, pred_c * scale, lp_budget, cfg.horizon, margin, cfg.lp_allow_skip))
            if sol.status != "optimal":
                # only reachable with lp_allow_skip=False
                log.warning("plug-in LP infeasible; falling back to unassigned rounds")
                sol = lp.solve(lp.opt_hat_lp(pred_r, pred_c * scale, lp_budget, cfg.horizon, margin, True))
            opt_hat = sol.objective_value
        else:
            opt_hat = float(np.mean(pred_r.max(axis=1)))
        radius = dual_radius(cfg.horizon, cfg.phi_min(), opt_hat, margin)
        costs = np.array([rec.cost.values for rec in self.history])
        grad_bound = 1.0 / cfg.horizon + float(np.max(costs.max(axis=0) / cfg.budget.totals))
        self.init = InitialPhaseResult(radius, opt_hat, margin, list(self.history), (err_r, err_c), grad_bound)
        return self.init

    # exploration-exploitation ---------------------------------------------

    def start_dual(self) -> None:
        cfg = self.config
        ee_rounds = cfg.horizon - cfg.initial_rounds(self.n_actions)
        rate = cfg.step_size or cfg.step_scale * default_step_size(self.n_costs, ee_rounds, self.init.grad_bound)
        self.dual = DualState.interior(self.n_costs, self.init.Lambda, constant_step(rate))
        if self.rho is None:
            self.rho = math.sqrt(self.n_actions * ee_rounds)

    def choose(self, row: TaskRow, pred_r: np.ndarray, pred_c: np.ndarray) -> tuple[int, float]:
        scores = lagrangian_score(pred_r, pred_c, self.dual, self.config.budget, self.config.horizon)
        dist = sampling_distribution(scores, self.rho)
        return _draw(dist.probabilities, self.rng), float(scores[dist.argmax_action])

    def run_exploration_exploitation(self) -> RunLedger:
        cfg = self.config
        if self.uses_dual and self.dual is None:
            self.start_dual()
        since_fit = 0
        while self.t < cfg.horizon:
            row = self._next()
            pred_r, pred_c = self.predictor.predict_row(row)
            action, score_max = self.choose(row, pred_r, pred_c)
            rec = self._try_commit(row, action)
            if rec is None:
                return self.ledger
            self._log_round(action, row, score_max)
            self.predictor.observe(rec)
            since_fit += 1
            if since_fit >= cfg.refit_every:
                self.predictor.refit()
                since_fit = 0
            if self.uses_dual:
                spent = row.costs[action] if cfg.dual_gradient_source == "realized" else pred_c[action]
                self.dual = omd_step(self.dual, dual_gradient(spent, cfg.budget, cfg.horizon), self.t)
                self.dual.check()
                if self.round_log is not None:
                    self.dual_log.append((self.t, self.dual.lam.copy(), self.dual.slack))
        self.ledger.stop_reason = "horizon"
        return self.ledger

    def run(self) -> RunLedger:
        if self.has_initial_phase:
            if self.run_initial_phase() is None:
                return self.ledger
        return self.run_exploration_exploitation()

    def summary(self) -> dict:
        init = self.init
        return {
            "policy": self.name,
            "Lambda": init.Lambda if init else None,
            "opt_hat": init.opt_hat if init else None,
            "M_T0": init.M_T0 if init else None,
            "rounds_executed": self.ledger.rounds_executed,
            "avg_reward": self.ledger.avg_reward,
            "reward_sum": self.ledger.reward_sum,
            "consumed": dict(zip(self.config.budget.names, self.ledger.consumed.tolist())),
            "stop_reason": self.ledger.stop_reason,
        }


def run_initial_phase(env: TraceEnv, config: SchedulerConfig, **kwargs) -> InitialPhaseResult | None:
    return BudgetedScheduler(env, config, **kwargs).run_initial_phase()


def run_exploration_exploitation(scheduler: BudgetedScheduler) -> RunLedger:
    return scheduler.run_exploration_exploitation()


def run_full(env: TraceEnv, config: SchedulerConfig, **kwargs) -> RunLedger:
    return BudgetedScheduler(env, config, **kwargs).run()


def run_trace(trace: Trace, config: SchedulerConfig, oracle: bool = False, **kwargs) -> BudgetedScheduler:
    """Run the scheduler on a fresh environment and return it for inspection."""
    env = TraceEnv(trace)
    if oracle:
        kwargs["predictor"] = OraclePredictor(trace.n_actions, trace.n_costs)
    sched = BudgetedScheduler(env, config, **kwargs)
    sched.run()
    return sched
