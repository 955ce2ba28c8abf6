"""Fixed (FLB) and budget-smoothed (BSLB) linear bidding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .env import EpisodeData
from .episode import EpisodeReport, run_policy
from .oracle import OracleResult


@dataclass(frozen=True)
class BaselineConfig:
    lambda0: float
    delta_min: float = 0.1
    delta_max: float = 10.0

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be > 0, got {self.lambda0}")
        if not 0 < self.delta_min < self.delta_max:
            raise ValueError("need 0 < delta_min < delta_max")


def flb_bid(value: float, cfg: BaselineConfig) -> float:
    if value < 0:
        raise ValueError(f"value must be >= 0, got {value}")
    return value / cfg.lambda0


def pacing_factor(time_left_ratio: float, budget_left_ratio: float, cfg: BaselineConfig) -> float:
    """Time-left over budget-left ratio, clamped; an empty budget pins it to the max."""
    if budget_left_ratio <= 0:
        return cfg.delta_max
    delta = time_left_ratio / budget_left_ratio
    return min(max(delta, cfg.delta_min), cfg.delta_max)


def bslb_bid(value: float, time_left_ratio: float, budget_left_ratio: float,
             cfg: BaselineConfig) -> float:
    if value < 0:
        raise ValueError(f"value must be >= 0, got {value}")
    return value / (cfg.lambda0 * pacing_factor(time_left_ratio, budget_left_ratio, cfg))


def run_baseline_episode(strategy: str, data: EpisodeData, budget: float, cfg: BaselineConfig,
                         oracle: Optional[OracleResult] = None) -> EpisodeReport:
    """Play ``data`` with ``strategy`` in {"flb", "bslb"}, λ fixed per slot boundary."""
    if strategy == "flb":
        def policy(state, last):
            return cfg.lambda0
    elif strategy == "bslb":
        def policy(state, last):
            time_left = (state.T - state.t) / state.T
            budget_left = state.budget_left / state.budget_total
            return cfg.lambda0 * pacing_factor(time_left, budget_left, cfg)
    else:
        raise ValueError(f"unknown baseline {strategy!r}")
    return run_policy(data, budget, cfg.lambda0, policy, oracle)
