"""λ-control layer: linear bids, λ adjustment actions and the agent observation."""

from __future__ import annotations

from dataclasses import dataclass, astuple

import numpy as np

from .env import EnvState, StepOutcome

DEFAULT_RATES = (-0.08, -0.03, -0.01, 0.0, 0.01, 0.03, 0.08)
STATE_DIM = 7


def compute_bid(value: float, lambda_: float) -> float:
    if not lambda_ > 0:
        raise ValueError(f"lambda must be > 0, got {lambda_}")
    if value < 0:
        raise ValueError(f"value must be >= 0, got {value}")
    return value / lambda_


@dataclass(frozen=True)
class ActionSpace:
    rates: tuple[float, ...] = DEFAULT_RATES

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if not rates:
            raise ValueError("action space needs at least one rate")
        if any(r <= -1 for r in rates):
            raise ValueError("every adjustment rate must be > -1")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("adjustment rates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.rates)

    @property
    def identity_index(self) -> int | None:
        try:
            return self.rates.index(0.0)
        except ValueError:
            return None


def apply_action(lambda_prev: float, action_index: int, space: ActionSpace) -> float:
    if not lambda_prev > 0:
        raise ValueError(f"lambda must be > 0, got {lambda_prev}")
    if not 0 <= action_index < len(space):
        raise ValueError(f"action index {action_index} outside [0, {len(space)})")
    return lambda_prev * (1.0 + space.rates[action_index])


@dataclass(frozen=True)
class Norms:
    """Scale constants for the observation; ``value_ref`` is a typical slot value."""

    cpm_ref: float = 1.0
    value_ref: float = 1.0

    def __post_init__(self):
        if not (self.cpm_ref > 0 and self.value_ref > 0):
            raise ValueError("normalization constants must be > 0")


@dataclass(frozen=True)
class StateVector:
    t_norm: float
    budget_left_norm: float
    rol_norm: float
    bcr: float
    cpm_norm: float
    win_rate: float
    last_reward_norm: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


@dataclass(frozen=True)
class EnvSnapshot:
    t: int
    budget_total: float
    budget_left: float

    @classmethod
    def of(cls, state: EnvState) -> "EnvSnapshot":
        return cls(state.t, state.budget_total, state.budget_left)


def initial_state(T: int) -> StateVector:
    """Observation before the first slot; BCR is 0 since no slot has run."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return StateVector(0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)


def build_state(prev: EnvSnapshot, outcome: StepOutcome, T: int, norms: Norms) -> StateVector:
    """Observation after the slot that started at ``prev``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    t = prev.t + 1
    budget_now = max(prev.budget_left - outcome.cost, 0.0)
    bcr = (budget_now - prev.budget_left) / prev.budget_left if prev.budget_left > 0 else 0.0
    return StateVector(
        t_norm=t / T,
        budget_left_norm=budget_now / prev.budget_total,
        rol_norm=(T - t) / T,
        bcr=bcr,
        cpm_norm=outcome.cpm / norms.cpm_ref,
        win_rate=outcome.win_rate,
        last_reward_norm=outcome.reward / norms.value_ref,
    )
