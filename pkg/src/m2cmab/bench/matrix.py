"""Multi-seed experiment matrix over traces, budget regimes, policies and initial-phase ratios.

Cells run independently (optionally on worker threads); a failing cell is
recorded with its error and left out of the aggregates. Results are always
ordered by cell key so reports do not depend on scheduling order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..core import Trace, TraceEnv
from ..lp import hindsight_opt
from ..scheduler import SchedulerConfig, t0_from_ratio
from .baselines import ABLATIONS, make_policy
from .traces import REGIME_NAMES, derive_budget_regimes

log = logging.getLogger(__name__)

DEFAULT_POLICIES = ("Random", "LatencyFirst", "MoneyFirst", "ThresholdBased", "Optimal", "M2CMAB")
ABLATION_POLICIES = ("M2CMAB", *ABLATIONS)
SWEEP_RATIOS = (0.025, 0.05, 0.1)
CELL_FIELDS = ("dataset", "regime", "policy", "ratio", "seed", "horizon", "T0", "avg_reward", "reward_sum",
               "rounds_executed", "stop_reason", "utilization", "regret", "error")


@dataclass
class MatrixSpec:
    policies: Sequence[str] = DEFAULT_POLICIES
    regimes: Sequence[str] = REGIME_NAMES
    seeds: Sequence[int] = (0, 1, 2, 3, 4)
    ratios: Sequence[float] = (0.05,)
    horizon: int | None = None  # None: the whole trace
    T0: int | None = None  # overrides the ratio when set
    scheduler: dict = field(default_factory=dict)  # SchedulerConfig overrides
    regret: bool = False
    curve_points: int = 0
    workers: int = 1

    def validate(self) -> None:
        if not self.policies or not self.regimes or not self.seeds or not self.ratios:
            raise ValueError("policies, regimes, seeds and ratios must be non-empty")
        bad = [r for r in self.regimes if r not in REGIME_NAMES]
        if bad:
            raise ValueError(f"unknown regimes {bad}")
        if any(not 0 < r < 1 for r in self.ratios):
            raise ValueError("ratios must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass
class CellResult:
    dataset: str
    regime: str
    policy: str
    ratio: float
    seed: int
    horizon: int = 0
    T0: int = 0
    avg_reward: float = float("nan")
    reward_sum: float = float("nan")
    rounds_executed: int = 0
    stop_reason: str | None = None
    utilization: dict = field(default_factory=dict)
    regret: float | None = None
    curve: list = field(default_factory=list)  # (round, regret) samples
    error: str | None = None

    @property
    def key(self) -> tuple:
        return (self.dataset, self.regime, self.policy, self.ratio, self.seed)

    @property
    def ok(self) -> bool:
        return self.error is None


def regret_curve(decision_log, opt_total: float, horizon: int, n_points: int) -> list[tuple[int, float]]:
    """Regret against the pro-rated hindsight value at ``n_points`` evenly spaced rounds."""
    if n_points < 1:
        return []
    rewards = np.zeros(horizon)
    for t, _a, r, _c in decision_log:
        rewards[t - 1] = r
    cum = np.cumsum(rewards)
    marks = np.unique(np.linspace(1, horizon, n_points).round().astype(int))
    return [(int(t), float(t * opt_total / horizon - cum[t - 1])) for t in marks]


def run_cell(dataset: str, trace: Trace, regime: str, policy: str, ratio: float, seed: int,
             spec: MatrixSpec, opt_cache: dict | None = None) -> CellResult:
    cell = CellResult(dataset, regime, policy, ratio, seed)
    try:
        T = spec.horizon or len(trace)
        rows = trace.head(T)
        budget = derive_budget_regimes(rows)[regime].budget()
        T0 = spec.T0 or t0_from_ratio(ratio, T, trace.n_actions)
        config = SchedulerConfig(T, T0, budget, seed=seed, **spec.scheduler)
        sched = make_policy(policy, TraceEnv(rows), config)
        ledger = sched.run()
        ledger.check()
        cell.horizon, cell.T0 = T, T0
        cell.avg_reward = ledger.avg_reward
        cell.reward_sum = ledger.reward_sum
        cell.rounds_executed = ledger.rounds_executed
        cell.stop_reason = ledger.stop_reason
        cell.utilization = dict(zip(budget.names, (ledger.consumed / budget.totals).tolist()))
        if spec.regret or spec.curve_points:
            key = (dataset, regime)
            if opt_cache is not None and key in opt_cache:
                opt = opt_cache[key]
            else:
                opt = hindsight_opt(rows, budget)
                if opt_cache is not None:
                    opt_cache[key] = opt
            cell.regret = opt - ledger.reward_sum
            cell.curve = regret_curve(ledger.decision_log, opt, T, spec.curve_points)
    except Exception as exc:  # isolate the failure to this cell
        log.warning("cell %s failed: %s", cell.key, exc)
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


@dataclass
class ExperimentReport:
    cells: list[CellResult]
    spec: dict = field(default_factory=dict)

    def groups(self) -> dict[tuple, list[CellResult]]:
        out: dict[tuple, list[CellResult]] = {}
        for c in sorted(self.cells, key=lambda c: c.key):
            out.setdefault(c.key[:4], []).append(c)
        return out

    def aggregate(self) -> list[dict]:
        """Mean and population std of average reward per (dataset, regime, policy, ratio)."""
        rows = []
        for (dataset, regime, policy, ratio), cells in self.groups().items():
            good = [c for c in cells if c.ok]
            vals = np.array([c.avg_reward for c in good])
            row = {
                "dataset": dataset, "regime": regime, "policy": policy, "ratio": ratio,
                "n_seeds": len(good), "n_failed": len(cells) - len(good),
                "mean_avg_reward": float(vals.mean()) if len(vals) else float("nan"),
                "std_avg_reward": float(vals.std()) if len(vals) else float("nan"),
                "mean_rounds": float(np.mean([c.rounds_executed for c in good])) if good else float("nan"),
            }
            for name in (good[0].utilization if good else {}):
                row[f"mean_utilization_{name}"] = float(np.mean([c.utilization[name] for c in good]))
            regrets = [c.regret for c in good if c.regret is not None]
            if regrets:
                row["mean_regret"] = float(np.mean(regrets))
            rows.append(row)
        return rows

    def mean_reward(self, policy: str, regime: str | None = None, dataset: str | None = None,
                    ratio: float | None = None) -> float:
        vals = [c.avg_reward for c in self.cells if c.ok and c.policy == policy
                and (regime is None or c.regime == regime) and (dataset is None or c.dataset == dataset)
                and (ratio is None or math.isclose(c.ratio, ratio))]
        return float(np.mean(vals)) if vals else float("nan")

    def rewards(self, policy: str, **filters) -> np.ndarray:
        return np.array([c.avg_reward for c in sorted(self.cells, key=lambda c: c.key)
                         if c.ok and c.policy == policy
                         and all(getattr(c, k) == v for k, v in filters.items())])

    def failures(self) -> list[CellResult]:
        return [c for c in self.cells if not c.ok]

    # serialisation -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {"spec": self.spec, "cells": [dataclasses.asdict(c) for c in sorted(self.cells, key=lambda c: c.key)],
                "aggregate": self.aggregate()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        cells = []
        for c in d["cells"]:
            c = dict(c)
            c["curve"] = [tuple(p) for p in c.get("curve", [])]
            cells.append(CellResult(**c))
        return cls(cells, d.get("spec", {}))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True, default=_json_default))

    @classmethod
    def load_json(cls, path) -> "ExperimentReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_csv(self, path) -> None:
        """One row per cell; utilisation flattened to one column per budget dimension."""
        cells = sorted(self.cells, key=lambda c: c.key)
        dims = sorted({k for c in cells for k in c.utilization})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f for f in CELL_FIELDS if f != "utilization"] + [f"utilization_{d}" for d in dims])
            for c in cells:
                w.writerow([getattr(c, f) for f in CELL_FIELDS if f != "utilization"]
                           + [c.utilization.get(d, "") for d in dims])

    def save_summary_csv(self, path) -> None:
        rows = self.aggregate()
        keys = sorted({k for r in rows for k in r}, key=lambda k: (k not in _SUMMARY_ORDER, _SUMMARY_ORDER.get(k, 0), k))
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)

    def save_curves(self, directory) -> list[Path]:
        """One regret-curve CSV per cell that has samples."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for c in sorted(self.cells, key=lambda c: c.key):
            if not c.curve:
                continue
            p = directory / f"regret_{c.dataset}_{c.regime}_{c.policy}_{c.ratio:g}_{c.seed}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["round", "regret"])
                w.writerows(c.curve)
            written.append(p)
        return written

    def tidy_rows(self) -> list[dict]:
        """Long format keyed by (dataset, regime, policy, seed, metric)."""
        out = []
        for c in sorted(self.cells, key=lambda c: c.key):
            if not c.ok:
                continue
            metrics = {"avg_reward": c.avg_reward, "rounds_executed": c.rounds_executed}
            metrics.update({f"utilization_{k}": v for k, v in c.utilization.items()})
            if c.regret is not None:
                metrics["regret"] = c.regret
            for name, value in metrics.items():
                out.append({"dataset": c.dataset, "regime": c.regime, "policy": c.policy, "ratio": c.ratio,
                            "seed": c.seed, "metric": name, "value": value})
        return out


_SUMMARY_ORDER = {k: i for i, k in enumerate(("dataset", "regime", "policy", "ratio", "n_seeds", "n_failed",
                                              "mean_avg_reward", "std_avg_reward", "mean_rounds"))}


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def run_matrix(traces: Mapping[str, Trace], spec: MatrixSpec | None = None, **overrides) -> ExperimentReport:
    spec = dataclasses.replace(spec or MatrixSpec(), **overrides)
    spec.validate()
    jobs = [(name, trace, regime, policy, float(ratio), int(seed))
            for name, trace in sorted(traces.items())
            for regime in spec.regimes for policy in spec.policies
            for ratio in spec.ratios for seed in spec.seeds]
    opt_cache: dict = {}
    if spec.workers == 1:
        cells = [run_cell(*job, spec, opt_cache) for job in jobs]
    else:
        with ThreadPoolExecutor(spec.workers) as pool:
            cells = list(pool.map(lambda job: run_cell(*job, spec, None), jobs))
    cells.sort(key=lambda c: c.key)
    info = dataclasses.asdict(spec)
    info["datasets"] = sorted(traces)
    return ExperimentReport(cells, info)


def ratio_sweep(traces: Mapping[str, Trace], spec: MatrixSpec | None = None, **overrides) -> ExperimentReport:
    """M2CMAB across the initial-phase ratios."""
    overrides.setdefault("policies", ("M2CMAB",))
    overrides.setdefault("ratios", SWEEP_RATIOS)
    return run_matrix(traces, spec, **overrides)


def ablation_study(traces: Mapping[str, Trace], spec: MatrixSpec | None = None, **overrides) -> ExperimentReport:
    """M2CMAB with each adapter in turn replaced by a uniform random predictor."""
    overrides.setdefault("policies", ABLATION_POLICIES)
    return run_matrix(traces, spec, **overrides)


def sweep_shape_ok(means: Sequence[float], tolerance: float = 0.05) -> bool:
    """True when values never rise after the best point, or the spread is within ``tolerance``."""
    means = list(means)
    best = int(np.argmax(means))
    tail = means[best:]
    non_increasing = all(b <= a for a, b in zip(tail, tail[1:]))
    spread = (max(means) - min(means)) / max(abs(max(means)), 1e-12)
    return non_increasing or spread < tolerance
