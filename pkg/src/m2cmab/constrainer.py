"""Lagrange multipliers for the long-term budget constraints.

The multiplier set ``{lam >= 0, ||lam||_1 <= radius}`` is lifted to a scaled
simplex by a slack coordinate, so the negative-entropy mirror step is a
closed-form exponentiated-gradient update followed by a rescale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from .core import BudgetVector


def constant_step(rate: float) -> Callable[[int], float]:
    if not rate > 0:
        raise ValueError("step size must be > 0")
    return lambda t: rate


def default_step_size(n_costs: int, rounds: int, grad_bound: float) -> float:
    """``sqrt(ln(C + 1) / rounds) / G`` for gradients bounded by ``G`` in sup-norm."""
    return math.sqrt(math.log(n_costs + 1) / max(rounds, 1)) / grad_bound


@dataclass
class DualState:
    lam: np.ndarray
    radius: float
    slack: float
    step_size: Callable[[int], float] = field(default=lambda t: 1.0, repr=False)

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        self.check()

    @classmethod
    def interior(cls, n_costs: int, radius: float, step_size: Callable[[int], float]) -> "DualState":
        """Each multiplier at ``radius / (2C)``, slack at ``radius / 2``."""
        return cls(np.full(n_costs, radius / (2 * n_costs)), radius, radius / 2, step_size)

    def check(self, tol: float = 1e-9) -> None:
        if np.any(self.lam < 0) or self.slack < 0:
            raise AssertionError("multipliers must be nonnegative")
        total = float(self.lam.sum()) + self.slack
        if abs(total - self.radius) > tol * max(1.0, self.radius):
            raise AssertionError(f"lifted mass {total} differs from radius {self.radius}")

    def copy(self) -> "DualState":
        return DualState(self.lam.copy(), self.radius, self.slack, self.step_size)


def dual_gradient(chosen_cost: np.ndarray, budget: BudgetVector, horizon: int) -> np.ndarray:
    """Gradient of the per-round dual objective: ``-(phi / Phi - 1/T)``."""
    return -(np.asarray(chosen_cost, dtype=float) / budget.totals - 1.0 / horizon)


def omd_step(state: DualState, gradient: np.ndarray, t: int) -> DualState:
    """One negative-entropy mirror step on the lifted simplex of mass ``radius``."""
    rate = state.step_size(t)
    expo = -rate * np.asarray(gradient, dtype=float)
    shift = max(float(expo.max()), 0.0)  # slack exponent is 0
    with np.errstate(divide="ignore"):
        log_lam = np.where(state.lam > 0, np.log(state.lam), -np.inf)
    weights = np.exp(log_lam + expo - shift)
    slack_w = state.slack * math.exp(-shift)
    total = float(weights.sum()) + slack_w
    scale = state.radius / total
    lam = weights * scale
    slack = state.radius - float(lam.sum())
    if slack < 0:  # rounding when the slack mass is tiny
        lam *= state.radius / float(lam.sum())
        slack = 0.0
    return DualState(lam, state.radius, slack, state.step_size)


def lagrangian_score(pred_reward, pred_cost, state: DualState, budget: BudgetVector, horizon: int):
    """``r_hat - <phi_hat / Phi - 1/T, lam>``; vectorised over leading action axes."""
    pressure = np.asarray(pred_cost, dtype=float) / budget.totals - 1.0 / horizon
    return np.asarray(pred_reward, dtype=float) - pressure @ state.lam


class DualTrajectoryWriter:
    """Streams ``round, lambda_1..lambda_C, slack`` rows to CSV."""

    def __init__(self, fh: TextIO, n_costs: int):
        self.writer = csv.writer(fh)
        self.writer.writerow(["round", *[f"lambda_{c + 1}" for c in range(n_costs)], "slack"])

    def write(self, t: int, state: DualState) -> None:
        self.writer.writerow([t, *(repr(float(v)) for v in state.lam), repr(float(state.slack))])
