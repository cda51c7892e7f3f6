"""Synthetic backend traces and budget regimes.

Two generator modes:

``linear``
    Rewards and costs are affine in ``(one-hot action || context)`` plus
    Gaussian noise, so the ridge adapters are correctly specified. Rows carry
    the noise-free means for the hindsight benchmark.
``heterogeneous``
    Task families with heavy-tailed difficulty, per-backend latency and
    billing models, and discrete reward levels (ROUGE-L mapping or exact
    match). Backend/difficulty interactions make it misspecified for linear
    adapters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..core import COST_NAMES, BudgetVector, TaskContext, TaskRow, Trace
from .costs import CloudRates, cloud_cost, exact_match_reward, local_cost, local_latency, rouge_to_reward

FAMILIES = ("vqa", "math", "dialogue", "diagram")
EXACT_MATCH_FAMILIES = ("math", "diagram")
HARDNESS_CENTRES = np.array([0.0, 0.5, 1.0, 1.5])
HARDNESS_WIDTH = 0.3


@dataclass(frozen=True)
class BackendProfile:
    """One execution backend.

    ``reward_means`` maps task family to the mean reward level on an easy
    task; ``difficulty_slope`` is how much each unit of log-difficulty costs.
    Local backends use ``flops`` (effective tokens per second) and the
    energy price; cloud backends use network round trip, decode speed and
    token/image rates.
    """

    label: str
    kind: str  # local | cloud
    reward_means: dict
    difficulty_slope: float = 0.5
    flops: float = 1500.0
    rtt: float = 0.3
    prefill_rate: float = 4000.0
    decode_rate: float = 80.0
    reasoning_factor: float = 1.0
    rates: CloudRates = CloudRates(0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("local", "cloud"):
            raise ValueError("kind must be 'local' or 'cloud'")
        if min(self.flops, self.prefill_rate, self.decode_rate) <= 0 or self.rtt < 0:
            raise ValueError("rates must be positive")

    def latency(self, t_in: float, t_out: float) -> float:
        if self.kind == "local":
            return local_latency(t_in, t_out * self.reasoning_factor, self.flops)
        return self.rtt + t_in / self.prefill_rate + t_out * self.reasoning_factor / self.decode_rate

    def money(self, t_in: float, t_out: float, images: float, latency: float) -> float:
        if self.kind == "local":
            return local_cost(latency)
        return cloud_cost(t_in, t_out * self.reasoning_factor, images, self.rates)


def default_backends() -> list[BackendProfile]:
    """Five profiles: one cheap, fast, weak local model and four cloud models."""
    return [
        BackendProfile("local-small", "local",
                       {"vqa": 2.6, "math": 2.4, "dialogue": 3.0, "diagram": 2.5},
                       difficulty_slope=0.9, flops=600.0),
        BackendProfile("cloud-nano", "cloud",
                       {"vqa": 3.3, "math": 3.6, "dialogue": 3.6, "diagram": 3.3},
                       difficulty_slope=0.6, rtt=0.4, decode_rate=150.0,
                       rates=CloudRates(0.05e-6, 0.4e-6, 5e-6)),
        BackendProfile("cloud-32b", "cloud",
                       {"vqa": 4.0, "math": 3.9, "dialogue": 4.1, "diagram": 4.0},
                       difficulty_slope=0.45, rtt=0.5, decode_rate=60.0,
                       rates=CloudRates(0.2e-6, 0.6e-6, 10e-6)),
        BackendProfile("cloud-moe", "cloud",
                       {"vqa": 3.8, "math": 3.7, "dialogue": 3.9, "diagram": 3.8},
                       difficulty_slope=0.5, rtt=0.45, decode_rate=110.0,
                       rates=CloudRates(0.1e-6, 0.4e-6, 5e-6)),
        BackendProfile("cloud-thinking", "cloud",
                       {"vqa": 4.4, "math": 4.6, "dialogue": 4.2, "diagram": 4.4},
                       difficulty_slope=0.25, rtt=0.6, decode_rate=70.0, reasoning_factor=3.0,
                       rates=CloudRates(0.15e-6, 0.6e-6, 10e-6)),
    ]


@dataclass
class GeneratorSpec:
    n_tasks: int
    mode: str = "linear"  # linear | heterogeneous
    noise: float = 0.1
    d_ctx: int = 6
    families: Sequence[str] = FAMILIES
    backends: list[BackendProfile] = field(default_factory=default_backends)
    context_format: str = "embedding"  # embedding | modalities
    tail_index: float = 2.5  # Pareto shape of the difficulty tail
    instance_seed: int = 0  # fixes the linear-mode weights independently of the row seed

    def validate(self) -> None:
        if self.n_tasks < 1:
            raise ValueError("invalid-spec: n_tasks must be positive")
        if len(self.backends) < 2:
            raise ValueError("invalid-spec: at least two backends are required")
        if len(self.families) < 2:
            raise ValueError("invalid-spec: at least two task families are required")
        if self.mode not in ("linear", "heterogeneous"):
            raise ValueError(f"invalid-spec: unknown mode {self.mode!r}")
        if self.context_format not in ("embedding", "modalities"):
            raise ValueError(f"invalid-spec: unknown context format {self.context_format!r}")
        if self.noise < 0:
            raise ValueError("invalid-spec: noise must be >= 0")
        min_dim = (2 + len(HARDNESS_CENTRES)) * len(self.families) + 4 if self.mode == "heterogeneous" else 1
        if self.d_ctx < min_dim:
            raise ValueError(f"invalid-spec: d_ctx must be >= {min_dim} in {self.mode} mode")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["families"] = list(self.families)
        return out


def _modalities(features: np.ndarray, rng: np.random.Generator) -> dict:
    """Token matrices whose uniform-attention pooling is exactly ``features``."""
    n_text, n_vision = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    jitter = rng.normal(0.0, 0.2, size=(n_text + n_vision, features.shape[0]))
    jitter -= jitter.mean(axis=0)
    tokens = features + jitter
    return {"text": tokens[:n_text], "vision": tokens[n_text:]}


def _make_context(index: int, features: np.ndarray, spec: GeneratorSpec, rng) -> TaskContext:
    if spec.context_format == "embedding":
        return TaskContext(index, pooled_embedding=features)
    return TaskContext(index, modality_features=_modalities(features, rng))


def _workload(spec: GeneratorSpec, rng: np.random.Generator, n: int):
    fam = rng.integers(len(spec.families), size=n)
    difficulty = rng.pareto(spec.tail_index, size=n) * rng.uniform(0.5, 1.5, size=n)
    t_in = rng.lognormal(np.log(600.0), 0.5, size=n)
    t_out = rng.lognormal(np.log(150.0), 0.4, size=n) * (1.0 + difficulty)
    images = rng.integers(0, 3, size=n)
    return fam, difficulty, t_in, t_out, images


def linear_instance(spec: GeneratorSpec):
    """Per-backend offsets at a nominal workload and shared context weights."""
    base_r = np.array([np.mean(list(b.reward_means.values())) for b in spec.backends])
    base_c = np.array([[b.latency(600.0, 150.0), b.money(600.0, 150.0, 1.0, b.latency(600.0, 150.0))]
                       for b in spec.backends])
    rng = np.random.default_rng(spec.instance_seed)
    w_r = rng.uniform(-0.3, 0.3, size=spec.d_ctx)
    w_c = rng.uniform(0.0, 0.2, size=(spec.d_ctx, 2)) * base_c.min(axis=0) / spec.d_ctx
    return base_r, base_c, w_r, w_c


def _linear_trace(spec: GeneratorSpec, rng: np.random.Generator) -> Trace:
    A = len(spec.backends)
    base_r, base_c, w_r, w_c = linear_instance(spec)
    rows = []
    for i in range(spec.n_tasks):
        z = rng.uniform(0.0, 1.0, size=spec.d_ctx)
        exp_r = base_r + w_r @ z
        exp_c = base_c + z @ w_c
        eps = rng.normal(size=(A, 3)) * spec.noise
        rewards = exp_r + eps[:, 0]
        # cost noise is relative to each backend's own scale
        costs = np.maximum(exp_c + eps[:, 1:] * base_c, 0.0)
        rows.append(TaskRow(_make_context(i, z, spec, rng), rewards, costs, exp_r, exp_c))
    return Trace(rows, COST_NAMES)


def _reward_level(family: str, expected: float, rng: np.random.Generator, noise: float) -> int:
    quality = np.clip((expected - 1.0) / 4.0, 0.0, 1.0)
    if family in EXACT_MATCH_FAMILIES:
        # the answer is right when the backend's quality clears a noisy bar
        return exact_match_reward(quality + rng.normal(0.0, noise) > 0.6)
    rouge = float(np.clip(rng.normal(0.55 * quality + 0.02, noise), 0.0, 1.0))
    return rouge_to_reward(rouge)


def _heterogeneous_trace(spec: GeneratorSpec, rng: np.random.Generator) -> Trace:
    n = spec.n_tasks
    F = len(spec.families)
    fam, difficulty, t_in, t_out, images = _workload(spec, rng, n)
    rows = []
    for i in range(n):
        family = spec.families[fam[i]]
        # observable proxies of the workload; the difficulty proxy is noisy
        hardness = np.log1p(max(difficulty[i] + rng.normal(0.0, spec.noise), 0.0))
        feats = np.zeros(spec.d_ctx)
        feats[fam[i]] = 1.0
        # family-specific difficulty slots: linear plus soft bins
        feats[F + fam[i]] = hardness
        bins = np.exp(-0.5 * ((hardness - HARDNESS_CENTRES) / HARDNESS_WIDTH) ** 2)
        start = 2 * F + fam[i] * len(HARDNESS_CENTRES)
        feats[start:start + len(HARDNESS_CENTRES)] = bins
        tail = (2 + len(HARDNESS_CENTRES)) * F
        feats[tail:tail + 4] = np.log(t_in[i]) / 7.0, images[i] / 2.0, hardness, np.log(t_out[i]) / 7.0
        feats[tail + 4:] = rng.uniform(0.0, 1.0, size=spec.d_ctx - tail - 4)
        rewards, costs = [], []
        for b in spec.backends:
            jitter = float(rng.lognormal(0.0, spec.noise))
            lat = b.latency(t_in[i], t_out[i]) * jitter
            costs.append((lat, b.money(t_in[i], t_out[i], images[i], lat)))
            expected = b.reward_means.get(family, 3.0) - b.difficulty_slope * np.log1p(difficulty[i])
            rewards.append(_reward_level(family, expected, rng, spec.noise))
        rows.append(TaskRow(_make_context(i, feats, spec, rng), np.array(rewards, dtype=float),
                            np.array(costs), family=family))
    return Trace(rows, COST_NAMES)


def generate_synthetic_trace(spec: GeneratorSpec, seed: int) -> Trace:
    spec.validate()
    rng = np.random.default_rng(seed)
    if spec.mode == "linear":
        return _linear_trace(spec, rng)
    return _heterogeneous_trace(spec, rng)


REGIME_NAMES = ("Restricted", "Normal", "Generous")


@dataclass(frozen=True)
class BudgetRegime:
    name: str
    totals: tuple[float, ...]
    names: tuple[str, ...] = COST_NAMES

    def budget(self) -> BudgetVector:
        return BudgetVector(np.array(self.totals), self.names)

    @property
    def latency_budget(self) -> float:
        return self.totals[self.names.index("latency")]

    @property
    def money_budget(self) -> float:
        return self.totals[self.names.index("money")]


def aggregated_costs(trace: Trace) -> np.ndarray:
    """Total cost of always playing each action, shape (A, C)."""
    return trace.cost_tensor().sum(axis=0)


def derive_budget_regimes(trace: Trace) -> dict[str, BudgetRegime]:
    """Per dimension: smallest, second-smallest and median aggregated action cost."""
    totals = aggregated_costs(trace)
    if totals.shape[0] < 3:
        raise ValueError("at least three actions are needed to derive budget regimes")
    ordered = np.sort(totals, axis=0)
    levels = {
        "Restricted": ordered[0],
        "Normal": ordered[1],
        "Generous": np.median(totals, axis=0),
    }
    return {name: BudgetRegime(name, tuple(float(v) for v in vals), trace.cost_names)
            for name, vals in levels.items()}
