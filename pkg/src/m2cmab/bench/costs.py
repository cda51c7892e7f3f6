"""Latency, monetary cost and reward-level models for simulated backends."""

from __future__ import annotations

from dataclasses import dataclass

P_LOCAL_WATTS = 600.0
KAPPA_PER_JOULE = 2.06e-8
DEFAULT_FLOPS_DEVICE = 1e12


def local_latency(t_in: float, t_out: float, flops: float = DEFAULT_FLOPS_DEVICE) -> float:
    """``(T_in + T_out) / FLOPS_device`` seconds."""
    if not flops > 0:
        raise ValueError("nonpositive-flops: device throughput must be > 0")
    return (t_in + t_out) / flops


def local_cost(latency: float, power: float = P_LOCAL_WATTS, kappa: float = KAPPA_PER_JOULE) -> float:
    """Energy price of running locally for ``latency`` seconds."""
    if latency < 0:
        raise ValueError("latency must be >= 0")
    return latency * power * kappa


@dataclass(frozen=True)
class CloudRates:
    per_input_token: float
    per_output_token: float
    per_image: float = 0.0

    def __post_init__(self):
        if min(self.per_input_token, self.per_output_token, self.per_image) < 0:
            raise ValueError("rates must be >= 0")


def cloud_cost(tok_in: float, tok_out: float, images: float, rates: CloudRates) -> float:
    if min(tok_in, tok_out, images) < 0:
        raise ValueError("counts must be >= 0")
    return tok_in * rates.per_input_token + tok_out * rates.per_output_token + images * rates.per_image


def rouge_to_reward(rouge_l: float) -> int:
    """Discrete reward level for a ROUGE-L score.

    0 -> 1, (0, 0.15) -> 2, [0.15, 0.3) -> 3, [0.3, 0.4] -> 4, (0.4, 1] -> 5.
    The point 0.4 is claimed by both neighbouring intervals of the source
    table; it is mapped to 4 here.
    """
    if not 0.0 <= rouge_l <= 1.0:
        raise ValueError(f"out-of-range ROUGE-L score {rouge_l}")
    if rouge_l == 0.0:
        return 1
    if rouge_l < 0.15:
        return 2
    if rouge_l < 0.3:
        return 3
    if rouge_l <= 0.4:
        return 4
    return 5


def exact_match_reward(correct: bool) -> int:
    return 5 if correct else 1
