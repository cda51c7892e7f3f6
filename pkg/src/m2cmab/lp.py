"""Round-wise linear programs: the plug-in estimate used to size the dual
radius and the hindsight benchmark used as regret comparator.

Each round ``t`` owns a distribution ``o[t, :]`` over actions (a sub-simplex
when skipping is allowed); ``C`` coupling rows bound the total normalised
consumption. Small instances are solved by the dense revised simplex below;
the hindsight benchmark over long traces goes through HiGHS on a sparse
matrix because a dense basis of that size is impractical.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BudgetVector, Trace

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-11
DENSE_LIMIT = 6000  # variables; above this hindsight uses HiGHS


@dataclass
class SimplexResult:
    x: np.ndarray | None
    value: float
    status: str  # optimal | infeasible | unbounded
    iterations: int = 0


class _Tableau:
    """Revised simplex state with an explicit basis inverse."""

    refactor_every = 64
    bland_after = 30

    def __init__(self, A: np.ndarray, b: np.ndarray, basis: list[int]):
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self.basis = list(basis)
        self.refactor()

    def refactor(self):
        self.B_inv = np.linalg.inv(self.A[:, self.basis])
        self.x_B = self.B_inv @ self.b
        self.since_refactor = 0

    def run(self, c: np.ndarray, allowed: np.ndarray, max_iter: int = 50000) -> tuple[str, int]:
        degenerate_streak = 0
        for it in range(max_iter):
            y = c[self.basis] @ self.B_inv
            d = c - y @ self.A
            d[self.basis] = 0.0
            d[~allowed] = 0.0
            candidates = np.nonzero(d > 1e-10)[0]
            if candidates.size == 0:
                return "optimal", it
            if degenerate_streak >= self.bland_after:
                j = int(candidates[0])
            else:
                # Dantzig pricing; argmax returns the lowest index among ties
                j = int(candidates[np.argmax(d[candidates])])
            u = self.B_inv @ self.A[:, j]
            pos = np.nonzero(u > PIVOT_TOL)[0]
            if pos.size == 0:
                return "unbounded", it
            ratios = self.x_B[pos] / u[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12]
            r = int(min(ties, key=lambda i: self.basis[i]))
            step = self.x_B[r] / u[r]
            degenerate_streak = degenerate_streak + 1 if step <= 1e-12 else 0
            self._pivot(r, j, u)
        raise RuntimeError("simplex iteration limit reached")

    def _pivot(self, r: int, j: int, u: np.ndarray):
        pivot_row = self.B_inv[r] / u[r]
        self.B_inv -= np.outer(u, pivot_row)
        self.B_inv[r] = pivot_row
        self.basis[r] = j
        self.since_refactor += 1
        if self.since_refactor >= self.refactor_every:
            self.refactor()
        else:
            self.x_B = self.B_inv @ self.b
            np.maximum(self.x_B, 0.0, out=self.x_B, where=self.x_B > -1e-12)


def simplex_max(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None) -> SimplexResult:
    """Maximise ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.

    Two-phase revised simplex. Pricing is Dantzig's rule with lowest-index
    tie-breaking; after a run of degenerate pivots it falls back to Bland's
    rule, which cannot cycle.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).reshape(-1)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # columns: x (n) | slacks (m_ub) | artificials (added as needed)
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1

    basis: list[int] = []
    art_rows = []
    for i in range(m):
        if i < m_ub and not flip[i]:
            basis.append(n + i)
        else:
            basis.append(-1)
            art_rows.append(i)
    n_art = len(art_rows)
    if n_art:
        art = np.zeros((m, n_art))
        for k, i in enumerate(art_rows):
            art[i, k] = 1.0
            basis[i] = n + m_ub + k
        A = np.hstack([A, art])
    total = A.shape[1]
    art_mask = np.zeros(total, dtype=bool)
    art_mask[n + m_ub:] = True

    tab = _Tableau(A, b, basis)
    iters = 0
    if n_art:
        c1 = np.where(art_mask, -1.0, 0.0)
        status, it = tab.run(c1, np.ones(total, dtype=bool))
        iters += it
        if c1[tab.basis] @ tab.x_B < -1e-8 * max(1.0, np.abs(b).max()):
            return SimplexResult(None, float("nan"), "infeasible", iters)
        # drive zero-level artificials out of the basis where possible
        for r, var in enumerate(list(tab.basis)):
            if not art_mask[var]:
                continue
            row = tab.B_inv[r] @ A
            row[art_mask] = 0.0
            row[tab.basis] = 0.0
            cand = np.nonzero(np.abs(row) > 1e-9)[0]
            if cand.size:
                j = int(cand[0])
                tab._pivot(r, j, tab.B_inv @ A[:, j])
        tab.refactor()

    c2 = np.zeros(total)
    c2[:n] = c
    status, it = tab.run(c2, ~art_mask)
    iters += it
    if status == "unbounded":
        return SimplexResult(None, float("inf"), "unbounded", iters)
    tab.refactor()
    z = np.zeros(total)
    z[tab.basis] = tab.x_B
    x = np.maximum(z[:n], 0.0)
    return SimplexResult(x, float(c @ x), "optimal", iters)


@dataclass
class RoundwiseLP:
    """``max sum_t sum_a o[t,a] R[t,a]`` s.t. ``sum_t sum_a o[t,a] K[t,a,:] <= rhs``.

    Rows of ``o`` sum to one, or to at most one when ``allow_skip``.
    """

    reward_matrix: np.ndarray
    cost_tensor: np.ndarray
    rhs: np.ndarray
    allow_skip: bool = True

    def __post_init__(self):
        self.reward_matrix = np.atleast_2d(np.asarray(self.reward_matrix, dtype=float))
        self.cost_tensor = np.asarray(self.cost_tensor, dtype=float)
        if self.cost_tensor.ndim == 2:
            self.cost_tensor = self.cost_tensor[:, :, None]
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        T, A = self.reward_matrix.shape
        if self.cost_tensor.shape != (T, A, self.rhs.shape[0]):
            raise ValueError(f"cost tensor shape {self.cost_tensor.shape} does not match "
                             f"({T}, {A}, {self.rhs.shape[0]})")
        for name, arr in (("reward", self.reward_matrix), ("cost", self.cost_tensor), ("rhs", self.rhs)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} entries must be finite")

    @property
    def shape(self) -> tuple[int, int, int]:
        T, A, C = self.cost_tensor.shape
        return T, A, C

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "reward_matrix": self.reward_matrix.tolist(),
            "cost_tensor": self.cost_tensor.tolist(),
            "rhs": self.rhs.tolist(),
            "allow_skip": self.allow_skip,
        }))

    @classmethod
    def load(cls, path: str | Path) -> "RoundwiseLP":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class LPSolution:
    distribution: np.ndarray | None
    objective_value: float
    status: str  # optimal | infeasible

    @property
    def skip_mass(self) -> float:
        if self.distribution is None:
            return 0.0
        return float(np.sum(1.0 - self.distribution.sum(axis=1)))


def _constraint_blocks(lp: RoundwiseLP):
    T, A, C = lp.shape
    K = lp.cost_tensor.reshape(T * A, C).T
    rounds = np.kron(np.eye(T), np.ones((1, A)))
    return K, rounds


def _solve_dense(lp: RoundwiseLP) -> LPSolution:
    T, A, C = lp.shape
    K, rounds = _constraint_blocks(lp)
    c = lp.reward_matrix.reshape(-1)
    if lp.allow_skip:
        res = simplex_max(c, np.vstack([K, rounds]), np.concatenate([lp.rhs, np.ones(T)]))
    else:
        res = simplex_max(c, K, lp.rhs, rounds, np.ones(T))
    if res.status != "optimal":
        return LPSolution(None, float("nan"), "infeasible")
    dist = np.clip(res.x.reshape(T, A), 0.0, 1.0)
    return LPSolution(dist, float(np.sum(dist * lp.reward_matrix)), "optimal")


def _solve_highs(lp: RoundwiseLP) -> LPSolution:
    from scipy import sparse
    from scipy.optimize import linprog

    T, A, C = lp.shape
    K = sparse.csr_matrix(lp.cost_tensor.reshape(T * A, C).T)
    rounds = sparse.kron(sparse.eye(T), np.ones((1, A)), format="csr")
    c = -lp.reward_matrix.reshape(-1)
    if lp.allow_skip:
        res = linprog(c, A_ub=sparse.vstack([K, rounds]), b_ub=np.concatenate([lp.rhs, np.ones(T)]),
                      bounds=(0, None), method="highs-ipm")
    else:
        res = linprog(c, A_ub=K, b_ub=lp.rhs, A_eq=rounds, b_eq=np.ones(T), bounds=(0, None), method="highs-ipm")
    if res.status != 0:
        return LPSolution(None, float("nan"), "infeasible")
    dist = np.clip(res.x.reshape(T, A), 0.0, 1.0)
    return LPSolution(dist, float(np.sum(dist * lp.reward_matrix)), "optimal")


def solve(lp: RoundwiseLP, method: str = "auto", dump_path: str | Path | None = None) -> LPSolution:
    """Solve a round-wise LP. ``method`` is ``simplex``, ``highs`` or ``auto``."""
    if dump_path is not None:
        lp.dump(dump_path)
    T, A, _ = lp.shape
    if method == "auto":
        method = "simplex" if T * A <= DENSE_LIMIT else "highs"
    sol = _solve_dense(lp) if method == "simplex" else _solve_highs(lp)
    if sol.status == "optimal" and lp.allow_skip and sol.skip_mass > 1e-9:
        log.info("LP solution leaves %.3g of round mass unassigned", sol.skip_mass)
    return sol


def opt_hat_lp(pred_rewards: np.ndarray, pred_costs: np.ndarray, budget: BudgetVector,
               horizon: int, margin: float, allow_skip: bool = True) -> RoundwiseLP:
    """Plug-in LP over ``T0`` held-out contexts.

    Objective ``(1/T0) sum o * r_hat``; constraints
    ``sum o * c_hat / (T0 * Phi) <= 1/T + 2 * margin / Phi``.
    """
    T0 = pred_rewards.shape[0]
    phi = budget.totals
    return RoundwiseLP(pred_rewards / T0, pred_costs / (T0 * phi), 1.0 / horizon + 2.0 * margin / phi, allow_skip)


def hindsight_opt(truth: Trace, budget: BudgetVector, horizon: int | None = None,
                  expected: bool = True, method: str = "auto") -> float:
    """Total reward of the best per-round randomised allocation over the realised trace.

    This is ``T * OPT`` for the empirical context distribution: maximise
    ``(1/T) sum o r`` subject to ``(1/T) sum o phi / Phi <= 1/T``. Noise-free
    means are used when the trace carries them and ``expected`` is set.
    If no full assignment fits the budget, rounds may be left unassigned.
    """
    T = len(truth) if horizon is None else horizon
    rows = truth.head(T)
    use_expected = expected and rows.has_expected
    R = rows.reward_matrix(use_expected)
    K = rows.cost_tensor(use_expected) / budget.totals
    sol = solve(RoundwiseLP(R, K, np.ones(len(budget)), allow_skip=False), method)
    if sol.status != "optimal":
        log.info("hindsight LP infeasible without skipping; allowing unassigned rounds")
        sol = solve(RoundwiseLP(R, K, np.ones(len(budget)), allow_skip=True), method)
    return sol.objective_value
