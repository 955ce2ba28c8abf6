"""Episodic second-price auction environment.

An episode is a day of impressions split into ``T`` regulation slots. Each
call to :func:`step` bids ``value / lambda`` on every impression of the
current slot, in arrival order, and charges the market price on a win.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np


class IllegalStateError(RuntimeError):
    """Raised when stepping an episode that has already terminated."""


@dataclass(frozen=True)
class Impression:
    slot: int
    value: float
    market_price: float
    click: Optional[int] = None

    def __post_init__(self):
        if self.slot < 0:
            raise ValueError(f"slot must be >= 0, got {self.slot}")
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError(f"value must be finite and >= 0, got {self.value}")
        if not (self.market_price >= 0 and math.isfinite(self.market_price)):
            raise ValueError(f"market_price must be finite and >= 0, got {self.market_price}")
        if self.click not in (None, 0, 1):
            raise ValueError(f"click must be 0, 1 or None, got {self.click}")


@dataclass(frozen=True)
class EpisodeData:
    """Immutable impression stream of one episode, sorted by slot."""

    episode_id: str
    T: int
    impressions: tuple[Impression, ...]

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        object.__setattr__(self, "impressions", tuple(self.impressions))
        prev = 0
        for imp in self.impressions:
            if imp.slot >= self.T:
                raise ValueError(f"impression slot {imp.slot} outside [0, {self.T})")
            if imp.slot < prev:
                raise ValueError("impressions must be sorted by slot")
            prev = imp.slot

    @cached_property
    def values(self) -> np.ndarray:
        return np.array([imp.value for imp in self.impressions], dtype=float)

    @cached_property
    def market_prices(self) -> np.ndarray:
        return np.array([imp.market_price for imp in self.impressions], dtype=float)

    @cached_property
    def slot_bounds(self) -> np.ndarray:
        """``bounds[t]:bounds[t+1]`` indexes the impressions of slot ``t``."""
        slots = np.array([imp.slot for imp in self.impressions], dtype=int)
        return np.searchsorted(slots, np.arange(self.T + 1), side="left")

    def slot(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.slot_bounds[t], self.slot_bounds[t + 1]
        return self.values[lo:hi], self.market_prices[lo:hi]

    @property
    def total_market_cost(self) -> float:
        return math.fsum(self.market_prices)


class ExactSum:
    """Running float sum kept free of rounding error (Shewchuk partials)."""

    def __init__(self):
        self._partials: list[float] = []

    def add(self, x: float) -> None:
        partials = self._partials
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]

    @property
    def value(self) -> float:
        return math.fsum(self._partials)

    def subtract_from(self, total: float, *extra: float) -> float:
        """Correctly rounded ``total - self - sum(extra)``; its sign is exact."""
        return math.fsum([total, *(-p for p in self._partials), *(-e for e in extra)])


@dataclass
class EnvState:
    data: EpisodeData
    budget_total: float
    budget_left: float
    lambda_: float
    t: int = 0
    cumulative_value: float = 0.0
    terminal: bool = False
    _spent: ExactSum = field(default_factory=ExactSum, repr=False)
    _won: ExactSum = field(default_factory=ExactSum, repr=False)

    @property
    def T(self) -> int:
        return self.data.T

    @property
    def spent(self) -> float:
        return self._spent.value


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    cost: float
    wins: int
    auctions: int
    cpm: float
    win_rate: float
    won_mask: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def reset(data: EpisodeData, budget: float, lambda0: float) -> EnvState:
    if not budget > 0:
        raise ValueError(f"budget must be > 0, got {budget}")
    if not lambda0 > 0:
        raise ValueError(f"lambda0 must be > 0, got {lambda0}")
    return EnvState(data=data, budget_total=float(budget), budget_left=float(budget),
                    lambda_=float(lambda0))


def is_terminal(state: EnvState) -> bool:
    return state.t >= state.T or state.budget_left <= 0


def _settle(state: EnvState, values: np.ndarray, prices: np.ndarray,
            lam: float) -> np.ndarray:
    bids = values / lam
    won = bids > prices
    if not won.any():
        return won
    cand = np.flatnonzero(won)
    # fast path: every candidate is affordable with a wide margin
    if float(prices[cand].sum()) * (1 + 1e-9) < state.budget_left * (1 - 1e-9):
        for i in cand:
            state._spent.add(float(prices[i]))
        return won
    won[:] = False
    for i in cand:
        mp = float(prices[i])
        if state._spent.subtract_from(state.budget_total, mp) >= 0:
            state._spent.add(mp)
            won[i] = True
    return won


def step(state: EnvState, lambda_new: float) -> StepOutcome:
    """Run the auctions of slot ``state.t`` at bid ``value / lambda_new``."""
    if state.terminal or is_terminal(state):
        raise IllegalStateError("step called on a terminal episode")
    if not lambda_new > 0:
        raise ValueError(f"lambda must be > 0, got {lambda_new}")

    values, prices = state.data.slot(state.t)
    won = _settle(state, values, prices, float(lambda_new))
    won_values = values[won]
    won_prices = prices[won]
    for v in won_values:
        state._won.add(float(v))

    wins = int(won.sum())
    auctions = len(values)
    cost = math.fsum(won_prices)
    state.lambda_ = float(lambda_new)
    state.budget_left = max(state._spent.subtract_from(state.budget_total), 0.0)
    state.cumulative_value = state._won.value
    state.t += 1
    state.terminal = is_terminal(state)
    return StepOutcome(
        reward=math.fsum(won_values),
        cost=cost,
        wins=wins,
        auctions=auctions,
        cpm=1000.0 * cost / wins if wins else 0.0,
        win_rate=wins / auctions if auctions else 0.0,
        won_mask=won,
    )


def run_fixed_lambda(data: EpisodeData, budget: float, lambdas: Sequence[float] | float
                     ) -> tuple[EnvState, list[StepOutcome]]:
    """Replay a whole episode under a constant λ or a per-slot λ schedule."""
    state = reset(data, budget, lambdas if np.isscalar(lambdas) else lambdas[0])
    outcomes = []
    while not state.terminal:
        lam = lambdas if np.isscalar(lambdas) else lambdas[state.t]
        outcomes.append(step(state, lam))
    return state, outcomes
