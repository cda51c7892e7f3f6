"""Domain types shared by the scheduler, the predictors and the benchmark.

Costs are kept in raw units (seconds, currency) everywhere in this module.
Normalisation by the budget happens only where scores and dual gradients are
computed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

COST_NAMES: tuple[str, ...] = ("latency", "money")


class TraceError(ValueError):
    """A trace row failed validation.

    ``kind`` is one of ``malformed-field``, ``missing-action-entry`` or
    ``negative-cost``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class EnvironmentExhausted(RuntimeError):
    pass


def _as_finite_array(values, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise TraceError("malformed-field", f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise TraceError("malformed-field", f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class TaskContext:
    """Feature payload of one task.

    Either ``pooled_embedding`` or ``modality_features`` (tag -> tokens x dim
    matrix) must be present. ``attention`` optionally holds the CLS rows of
    the attention tensor, one row per head, over the concatenated tokens.
    """

    round_index: int
    modality_features: Mapping[str, np.ndarray] | None = None
    pooled_embedding: np.ndarray | None = None
    attention: np.ndarray | None = None

    def __post_init__(self):
        if self.round_index < 0:
            raise TraceError("malformed-field", "round_index must be nonnegative")
        if self.modality_features is None and self.pooled_embedding is None:
            raise TraceError("malformed-field", "context needs an embedding or modality features")
        if self.pooled_embedding is not None:
            object.__setattr__(
                self, "pooled_embedding", _as_finite_array(self.pooled_embedding, "embedding", 1)
            )
        if self.modality_features is not None:
            feats = {
                str(tag): _as_finite_array(mat, f"modality {tag}", 2)
                for tag, mat in sorted(self.modality_features.items())
            }
            if not feats:
                raise TraceError("malformed-field", "empty modality map")
            widths = {m.shape[1] for m in feats.values()}
            if len(widths) != 1:
                raise TraceError("malformed-field", "modalities must share the per-token dimension")
            object.__setattr__(self, "modality_features", feats)
        if self.attention is not None:
            object.__setattr__(self, "attention", _as_finite_array(self.attention, "attention", 2))

    def to_dict(self) -> dict:
        out: dict = {"round_index": self.round_index}
        if self.pooled_embedding is not None:
            out["embedding"] = self.pooled_embedding.tolist()
        if self.modality_features is not None:
            out["modalities"] = {k: v.tolist() for k, v in self.modality_features.items()}
        if self.attention is not None:
            out["attention"] = self.attention.tolist()
        return out

    @classmethod
    def from_dict(cls, data: Mapping, round_index: int | None = None) -> "TaskContext":
        if not isinstance(data, Mapping):
            raise TraceError("malformed-field", "context must be an object")
        if "embedding" not in data and "modalities" not in data:
            raise TraceError("malformed-field", "context needs 'embedding' or 'modalities'")
        idx = data.get("round_index", 0) if round_index is None else round_index
        mods = data.get("modalities")
        if mods is not None and not isinstance(mods, Mapping):
            raise TraceError("malformed-field", "'modalities' must be an object")
        return cls(
            round_index=int(idx),
            modality_features=mods,
            pooled_embedding=data.get("embedding"),
            attention=data.get("attention"),
        )


@dataclass(frozen=True, eq=False)
class ActionSpec:
    action_id: int
    label: str
    action_embedding: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "action_embedding", _as_finite_array(self.action_embedding, "action_embedding", 1)
        )

    def to_dict(self) -> dict:
        return {"action_id": self.action_id, "label": self.label,
                "embedding": self.action_embedding.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ActionSpec":
        return cls(int(data["action_id"]), str(data["label"]), data["embedding"])


def one_hot_actions(n_actions: int, labels: Sequence[str] | None = None) -> list[ActionSpec]:
    labels = labels or [f"backend-{i}" for i in range(n_actions)]
    eye = np.eye(n_actions)
    return [ActionSpec(i, labels[i], eye[i]) for i in range(n_actions)]


def check_action_set(actions: Sequence[ActionSpec]) -> None:
    ids = [a.action_id for a in actions]
    if sorted(ids) != list(range(len(ids))):
        raise ValueError(f"action ids must be dense and unique, got {ids}")
    dims = {a.action_embedding.shape[0] for a in actions}
    if len(dims) != 1:
        raise ValueError("action embeddings must share one dimension")


@dataclass(frozen=True, eq=False)
class CostVector:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise TraceError("malformed-field", "cost entries must be finite")
        if np.any(arr < 0):
            raise TraceError("negative-cost", f"cost entries must be >= 0, got {arr.tolist()}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.shape[0]

    def to_list(self) -> list[float]:
        return self.values.tolist()


@dataclass(frozen=True, eq=False)
class BudgetVector:
    totals: np.ndarray
    names: tuple[str, ...] = COST_NAMES

    def __post_init__(self):
        arr = np.array(self.totals, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError(f"budget entries must be finite and > 0, got {arr.tolist()}")
        if len(self.names) != arr.shape[0]:
            raise ValueError("one name per budget dimension is required")
        arr.setflags(write=False)
        object.__setattr__(self, "totals", arr)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self):
        return self.totals.shape[0]

    def phi_min(self, literal: bool = False) -> float:
        """Smallest budget entry, or ``||1/Phi||_inf`` when ``literal``."""
        if literal:
            return float(np.max(1.0 / self.totals))
        return float(np.min(self.totals))

    def to_dict(self) -> dict:
        return dict(zip(self.names, self.totals.tolist()))

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "BudgetVector":
        names = tuple(data)
        return cls(np.array([data[n] for n in names], dtype=float), names)


@dataclass(frozen=True, eq=False)
class ObservationRecord:
    reward: float
    cost: CostVector
    action_id: int
    context: TaskContext

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise TraceError("malformed-field", "reward must be finite")

    def to_dict(self) -> dict:
        return {"reward": self.reward, "cost": self.cost.to_list(),
                "action_id": self.action_id, "context": self.context.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ObservationRecord":
        return cls(float(data["reward"]), CostVector(data["cost"]), int(data["action_id"]),
                   TaskContext.from_dict(data["context"]))


@dataclass
class RunLedger:
    """Cumulative consumption and the per-round decision log of one run."""

    n_costs: int
    consumed: np.ndarray = None
    rounds_executed: int = 0
    reward_sum: float = 0.0
    decision_log: list = field(default_factory=list)
    stop_reason: str | None = None

    def __post_init__(self):
        if self.consumed is None:
            self.consumed = np.zeros(self.n_costs)

    def fits(self, cost: np.ndarray, budget: BudgetVector) -> bool:
        return bool(np.all(self.consumed + cost <= budget.totals))

    def first_violation(self, cost: np.ndarray, budget: BudgetVector) -> str | None:
        over = np.nonzero(self.consumed + cost > budget.totals)[0]
        if over.size == 0:
            return None
        return f"{budget.names[over[0]]}_budget"

    def commit(self, round_index: int, action_id: int, reward: float, cost: np.ndarray) -> None:
        self.consumed = self.consumed + cost
        self.rounds_executed += 1
        self.reward_sum += reward
        self.decision_log.append((round_index, int(action_id), float(reward), tuple(float(c) for c in cost)))

    @property
    def avg_reward(self) -> float:
        if self.rounds_executed == 0:
            return 0.0
        return self.reward_sum / self.rounds_executed

    def check(self, rtol: float = 1e-9) -> None:
        assert self.rounds_executed == len(self.decision_log)
        total = np.zeros(self.n_costs)
        for *_, cost in self.decision_log:
            total += cost
        assert np.allclose(total, self.consumed, rtol=rtol, atol=0.0)

    def to_dict(self) -> dict:
        return {
            "n_costs": self.n_costs,
            "consumed": self.consumed.tolist(),
            "rounds_executed": self.rounds_executed,
            "reward_sum": self.reward_sum,
            "decision_log": [list(r[:3]) + [list(r[3])] for r in self.decision_log],
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunLedger":
        log = [(int(r), int(a), float(w), tuple(c)) for r, a, w, c in data["decision_log"]]
        return cls(int(data["n_costs"]), np.array(data["consumed"], dtype=float),
                   int(data["rounds_executed"]), float(data["reward_sum"]), log, data["stop_reason"])


@dataclass(frozen=True, eq=False)
class TaskRow:
    """One validated task: its context and the per-action ground truth.

    ``rewards`` has shape (A,), ``costs`` shape (A, C). ``expected_*`` carry the
    noise-free means when the generator knows them.
    """

    context: TaskContext
    rewards: np.ndarray
    costs: np.ndarray
    expected_rewards: np.ndarray | None = None
    expected_costs: np.ndarray | None = None
    family: str | None = None

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[0]

    def mean_rewards(self) -> np.ndarray:
        return self.rewards if self.expected_rewards is None else self.expected_rewards

    def mean_costs(self) -> np.ndarray:
        return self.costs if self.expected_costs is None else self.expected_costs

    def observe(self, action_id: int) -> ObservationRecord:
        return ObservationRecord(float(self.rewards[action_id]), CostVector(self.costs[action_id]),
                                 action_id, self.context)

    def to_dict(self, cost_names: Sequence[str] = COST_NAMES) -> dict:
        actions = []
        for a in range(self.n_actions):
            entry = {"action_id": a, "reward": float(self.rewards[a])}
            for c, name in enumerate(cost_names):
                entry[name] = float(self.costs[a, c])
            if self.expected_rewards is not None:
                entry["expected_reward"] = float(self.expected_rewards[a])
            if self.expected_costs is not None:
                for c, name in enumerate(cost_names):
                    entry[f"expected_{name}"] = float(self.expected_costs[a, c])
            actions.append(entry)
        ctx = self.context.to_dict()
        ctx.pop("round_index")
        out = {"context": ctx, "actions": actions}
        if self.family is not None:
            out["family"] = self.family
        return out


def _number(entry: Mapping, key: str, action_id) -> float:
    if key not in entry:
        raise TraceError("malformed-field", f"action {action_id} lacks '{key}'")
    value = entry[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise TraceError("malformed-field", f"action {action_id} field '{key}' is not a finite number")
    return float(value)


def validate_trace_row(row: Mapping, n_actions: int, round_index: int = 0,
                       cost_names: Sequence[str] = COST_NAMES) -> TaskRow:
    """Validate one parsed trace object and return its per-action table."""
    if not isinstance(row, Mapping):
        raise TraceError("malformed-field", "row must be a JSON object")
    if "context" not in row or "actions" not in row:
        raise TraceError("malformed-field", "row needs 'context' and 'actions'")
    context = TaskContext.from_dict(row["context"], round_index=round_index)
    entries = row["actions"]
    if not isinstance(entries, list):
        raise TraceError("malformed-field", "'actions' must be an array")

    by_id: dict[int, Mapping] = {}
    for entry in entries:
        if not isinstance(entry, Mapping) or "action_id" not in entry:
            raise TraceError("malformed-field", "action entry without action_id")
        aid = entry["action_id"]
        if isinstance(aid, bool) or not isinstance(aid, int):
            raise TraceError("malformed-field", f"action_id {aid!r} is not an integer")
        if aid in by_id or not 0 <= aid < n_actions:
            raise TraceError("malformed-field", f"unexpected or duplicate action_id {aid}")
        by_id[aid] = entry
    missing = sorted(set(range(n_actions)) - set(by_id))
    if missing:
        raise TraceError("missing-action-entry", f"no entry for action(s) {missing}")

    n_costs = len(cost_names)
    rewards = np.empty(n_actions)
    costs = np.empty((n_actions, n_costs))
    has_expected = all("expected_reward" in by_id[a] for a in range(n_actions))
    exp_r = np.empty(n_actions) if has_expected else None
    exp_c = np.empty((n_actions, n_costs)) if has_expected else None
    for a in range(n_actions):
        entry = by_id[a]
        rewards[a] = _number(entry, "reward", a)
        for c, name in enumerate(cost_names):
            costs[a, c] = _number(entry, name, a)
            if costs[a, c] < 0:
                raise TraceError("negative-cost", f"action {a} has {name} = {costs[a, c]}")
        if has_expected:
            exp_r[a] = _number(entry, "expected_reward", a)
            for c, name in enumerate(cost_names):
                exp_c[a, c] = _number(entry, f"expected_{name}", a)
    return TaskRow(context, rewards, costs, exp_r, exp_c, row.get("family"))


@dataclass
class Trace:
    rows: list[TaskRow]
    cost_names: tuple[str, ...] = COST_NAMES

    def __len__(self):
        return len(self.rows)

    def __iter__(self) -> Iterator[TaskRow]:
        return iter(self.rows)

    @property
    def n_actions(self) -> int:
        return self.rows[0].n_actions

    @property
    def n_costs(self) -> int:
        return len(self.cost_names)

    def head(self, n: int) -> "Trace":
        return Trace(self.rows[:n], self.cost_names)

    def reward_matrix(self, expected: bool = False) -> np.ndarray:
        return np.stack([r.mean_rewards() if expected else r.rewards for r in self.rows])

    def cost_tensor(self, expected: bool = False) -> np.ndarray:
        return np.stack([r.mean_costs() if expected else r.costs for r in self.rows])

    @property
    def has_expected(self) -> bool:
        return all(r.expected_rewards is not None for r in self.rows)

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_dict(self.cost_names)) + "\n" for r in self.rows)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_lines(cls, lines: Iterable[str], cost_names: Sequence[str] = COST_NAMES) -> "Trace":
        rows: list[TaskRow] = []
        n_actions = None
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError("malformed-field", f"line {i + 1}: {exc}") from exc
            if n_actions is None:
                acts = obj.get("actions") if isinstance(obj, Mapping) else None
                if not isinstance(acts, list) or not acts:
                    raise TraceError("malformed-field", f"line {i + 1}: no actions")
                n_actions = len(acts)
            rows.append(validate_trace_row(obj, n_actions, len(rows), cost_names))
        if not rows:
            raise TraceError("malformed-field", "trace is empty")
        return cls(rows, tuple(cost_names))

    @classmethod
    def load(cls, path: str | Path, cost_names: Sequence[str] = COST_NAMES) -> "Trace":
        with open(path) as fh:
            return cls.from_lines(fh, cost_names)


class TraceEnv:
    """Reveals trace rows in file order, one per round."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.cursor = 0

    @property
    def n_actions(self) -> int:
        return self.trace.n_actions

    @property
    def remaining(self) -> int:
        return len(self.trace) - self.cursor

    def next_task(self) -> TaskRow:
        if self.cursor >= len(self.trace):
            raise EnvironmentExhausted(f"trace exhausted after {self.cursor} tasks")
        row = self.trace.rows[self.cursor]
        self.cursor += 1
        return row
