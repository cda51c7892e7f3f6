"""Reward and per-dimension cost adapters.

Each adapter is a linear head on ``(z_a || z_x || 1)`` trained by minimising

    J(theta) = 1/(2n) * sum_i (theta . f_i - y_i)^2 + eta/2 * ||theta - theta0||^2

which has the closed form ``(F'F/n + eta I) theta = F'y/n + eta theta0``.
All heads share the design matrix, so the bank keeps one Gram matrix and
solves every head in a single call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import ActionSpec, CostVector, ObservationRecord, TaskContext, TaskRow, check_action_set
from .embed import context_embedding, joint_features_all


@dataclass
class AdapterModel:
    weights: np.ndarray
    prior: np.ndarray
    reg_coeff: float = 1.0
    fitted_on: int = 0

    def __post_init__(self):
        if not self.reg_coeff > 0:
            raise ValueError("reg_coeff must be > 0")
        self.weights = np.asarray(self.weights, dtype=float)
        self.prior = np.asarray(self.prior, dtype=float)
        if self.weights.shape != self.prior.shape:
            raise ValueError("weights and prior must share a shape")

    @classmethod
    def zeros(cls, dim: int, reg_coeff: float = 1.0) -> "AdapterModel":
        return cls(np.zeros(dim), np.zeros(dim), reg_coeff)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights

    def objective(self, features: np.ndarray, targets: np.ndarray, weights=None) -> float:
        w = self.weights if weights is None else weights
        resid = features @ w - targets
        dev = w - self.prior
        return 0.5 * float(resid @ resid) / len(targets) + 0.5 * self.reg_coeff * float(dev @ dev)

    def gradient(self, features: np.ndarray, targets: np.ndarray, weights=None) -> np.ndarray:
        w = self.weights if weights is None else weights
        resid = features @ w - targets
        return features.T @ resid / len(targets) + self.reg_coeff * (w - self.prior)


class RandomAdapter:
    """Stand-in head that ignores its input and draws uniformly from [low, high]."""

    def __init__(self, low: float, high: float, rng: np.random.Generator):
        self.low, self.high = float(low), float(max(high, low))
        self.rng = rng

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.rng.uniform(self.low, self.high, size=features.shape[0])


def _ridge_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # the regularised Gram matrix is symmetric positive definite
    factor = cho_factor(gram)
    sol = cho_solve(factor, rhs)
    # one refinement step keeps the stationarity residual near machine precision
    return sol + cho_solve(factor, rhs - gram @ sol)


class PredictorBank:
    """Reward head plus one cost head per budget dimension.

    The bank accumulates sufficient statistics as observations arrive;
    ``refit`` solves all heads from them. Heads replaced by a
    :class:`RandomAdapter` are skipped by the solver.
    """

    def __init__(self, actions: Sequence[ActionSpec], d_ctx: int, n_costs: int,
                 reg_coeff: float = 1.0, normalize_attention: bool = False, interactions: bool = False):
        check_action_set(actions)
        self.actions = sorted(actions, key=lambda a: a.action_id)
        self.action_matrix = np.stack([a.action_embedding for a in self.actions])
        self.d_ctx = d_ctx
        self.n_costs = n_costs
        self.normalize_attention = normalize_attention
        # optional action x context block lets linear heads rank actions per context
        self.interactions = interactions
        d_act = self.action_matrix.shape[1]
        dim = d_act + d_ctx + 1 + (d_act * d_ctx if interactions else 0)
        self.reward_head = AdapterModel.zeros(dim, reg_coeff)
        self.cost_heads = [AdapterModel.zeros(dim, reg_coeff) for _ in range(n_costs)]
        self.random_heads: dict[int, RandomAdapter] = {}
        self._reset_stats()

    @property
    def dim(self) -> int:
        return self.reward_head.weights.shape[0]

    @property
    def n_actions(self) -> int:
        return self.action_matrix.shape[0]

    def heads(self) -> list[AdapterModel]:
        return [self.reward_head, *self.cost_heads]

    def _reset_stats(self):
        self._gram = np.zeros((self.dim, self.dim))
        self._moment = np.zeros((self.dim, 1 + self.n_costs))
        self._n = 0
        self._target_min = np.full(1 + self.n_costs, np.inf)
        self._target_max = np.full(1 + self.n_costs, -np.inf)

    # features -------------------------------------------------------------

    def embed(self, context: TaskContext) -> np.ndarray:
        z = context_embedding(context, self.normalize_attention)
        if z.shape[0] != self.d_ctx:
            raise ValueError(f"dimension-mismatch: context embedding has {z.shape[0]} entries, "
                             f"expected {self.d_ctx}")
        return z

    def features(self, context: TaskContext) -> np.ndarray:
        """Design rows ``(action || context || 1 [|| action x context])`` for every action, shape (A, dim)."""
        z = self.embed(context)
        joint = joint_features_all(z, self.action_matrix)
        blocks = [joint, np.ones((joint.shape[0], 1))]
        if self.interactions:
            blocks.append(np.einsum("ai,j->aij", self.action_matrix, z).reshape(joint.shape[0], -1))
        return np.hstack(blocks)

    def feature(self, context: TaskContext, action_id: int) -> np.ndarray:
        return self.features(context)[action_id]

    # prediction -----------------------------------------------------------

    def _predict_rows(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        heads = self.heads()
        out = np.empty((rows.shape[0], len(heads)))
        for k, head in enumerate(heads):
            out[:, k] = self.random_heads[k].predict(rows) if k in self.random_heads else head.predict(rows)
        return out[:, 0], np.maximum(out[:, 1:], 0.0)

    def predict_context(self, context: TaskContext) -> tuple[np.ndarray, np.ndarray]:
        """Predicted rewards (A,) and clamped costs (A, C) for one context."""
        return self._predict_rows(self.features(context))

    def predict_row(self, row: TaskRow) -> tuple[np.ndarray, np.ndarray]:
        return self.predict_context(row.context)

    # training -------------------------------------------------------------

    def observe(self, record: ObservationRecord) -> None:
        x = self.feature(record.context, record.action_id)
        y = np.concatenate([[record.reward], record.cost.values])
        self._gram += np.outer(x, x)
        self._moment += np.outer(x, y)
        self._n += 1
        np.minimum(self._target_min, y, out=self._target_min)
        np.maximum(self._target_max, y, out=self._target_max)

    def refit(self) -> None:
        if self._n == 0:
            raise ValueError("cannot fit on an empty history")
        heads = self.heads()
        etas = {h.reg_coeff for h in heads}
        priors = np.column_stack([h.prior for h in heads])
        if len(etas) == 1:
            eta = etas.pop()
            gram = self._gram / self._n + eta * np.eye(self.dim)
            sol = _ridge_solve(gram, self._moment / self._n + eta * priors)
            for k, h in enumerate(heads):
                h.weights = sol[:, k].copy()
        else:
            for k, h in enumerate(heads):
                gram = self._gram / self._n + h.reg_coeff * np.eye(self.dim)
                h.weights = _ridge_solve(gram, self._moment[:, k] / self._n + h.reg_coeff * h.prior)
        for h in heads:
            h.fitted_on = self._n

    def fit(self, history: Sequence[ObservationRecord]) -> "PredictorBank":
        if not history:
            raise ValueError("history must be nonempty")
        self._reset_stats()
        for rec in history:
            self.observe(rec)
        self.refit()
        return self

    def reanchor(self) -> None:
        """Move every prior to the current weights (warm-start regularisation)."""
        for h in self.heads():
            h.prior = h.weights.copy()

    def randomize_head(self, head_index: int, rng: np.random.Generator) -> None:
        """Replace head ``head_index`` (0 = reward, 1 + c = cost c) with a random predictor
        spanning the targets observed so far."""
        lo, hi = self._target_min[head_index], self._target_max[head_index]
        if not np.isfinite(lo):
            lo, hi = 0.0, 1.0
        self.random_heads[head_index] = RandomAdapter(lo, hi, rng)

    def holdout_error(self, validation: Sequence[ObservationRecord]) -> tuple[float, float]:
        return holdout_error(self, validation)

    # checkpoint -----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "reward": {"weights": self.reward_head.weights.tolist(), "prior": self.reward_head.prior.tolist(),
                       "reg_coeff": self.reward_head.reg_coeff, "fitted_on": self.reward_head.fitted_on},
            "costs": [{"weights": h.weights.tolist(), "prior": h.prior.tolist(),
                       "reg_coeff": h.reg_coeff, "fitted_on": h.fitted_on} for h in self.cost_heads],
        }

    def load_state_dict(self, state: dict) -> None:
        self.reward_head = AdapterModel(**{k: np.array(v) if isinstance(v, list) else v
                                           for k, v in state["reward"].items()})
        self.cost_heads = [AdapterModel(**{k: np.array(v) if isinstance(v, list) else v for k, v in h.items()})
                           for h in state["costs"]]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.state_dict()))

    def load(self, path: str | Path) -> None:
        self.load_state_dict(json.loads(Path(path).read_text()))


class OraclePredictor:
    """Returns the realised per-round reward and cost of every action."""

    def __init__(self, n_actions: int, n_costs: int):
        self.n_actions = n_actions
        self.n_costs = n_costs

    def predict_row(self, row: TaskRow) -> tuple[np.ndarray, np.ndarray]:
        return row.rewards, row.costs

    def observe(self, record: ObservationRecord) -> None:
        pass

    def refit(self) -> None:
        pass

    def reanchor(self) -> None:
        pass

    def holdout_error(self, validation) -> tuple[float, float]:
        return 0.0, 0.0


def predict_reward(bank: PredictorBank, context: TaskContext, action: ActionSpec) -> float:
    x = bank.feature(context, action.action_id)
    return float(bank._predict_rows(x[None, :])[0][0])


def predict_cost(bank: PredictorBank, context: TaskContext, action: ActionSpec) -> CostVector:
    x = bank.feature(context, action.action_id)
    return CostVector(bank._predict_rows(x[None, :])[1][0])


def fit(bank: PredictorBank, history: Sequence[ObservationRecord]) -> PredictorBank:
    return bank.fit(history)


def holdout_error(bank, validation: Sequence[ObservationRecord]) -> tuple[float, float]:
    """Mean squared reward error and the per-dimension-averaged mean squared cost error."""
    if not validation:
        raise ValueError("validation set must be nonempty")
    sq_r = 0.0
    sq_c = 0.0
    for rec in validation:
        r_hat, c_hat = bank.predict_context(rec.context)
        sq_r += (r_hat[rec.action_id] - rec.reward) ** 2
        sq_c += float(np.mean((c_hat[rec.action_id] - rec.cost.values) ** 2))
    n = len(validation)
    return sq_r / n, sq_c / n
