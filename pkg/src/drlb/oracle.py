"""Hindsight ground truth: greedy λ*, exact knapsack checks and the R/R* metric."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .env import ExactSum, Impression

BRUTE_FORCE_LIMIT = 22


class SizeLimitError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    lambda_star: float
    r_star: float
    spend: float
    winners: tuple[int, ...] = ()


def _arrays(impressions: Sequence[Impression]) -> tuple[np.ndarray, np.ndarray]:
    values = np.array([imp.value for imp in impressions], dtype=float)
    prices = np.array([imp.market_price for imp in impressions], dtype=float)
    return values, prices


def optimal_lambda_greedy(impressions: Sequence[Impression], budget: float) -> OracleResult:
    """Dantzig's density greedy, expressed as the constant λ that wins its prefix.

    Items are taken by decreasing value/price until the next one no longer
    fits; λ* is that first excluded item's density, so under the strict win
    rule ``v/λ* > price`` exactly the taken prefix wins. Items of the prefix
    that tie the marginal density cannot be separated by a linear bid and
    are dropped.
    """
    if not impressions:
        raise ValueError("optimal_lambda_greedy needs at least one impression")
    if not budget > 0:
        raise ValueError(f"budget must be > 0, got {budget}")
    values, prices = _arrays(impressions)

    free = np.flatnonzero((prices == 0) & (values > 0))
    priced = np.flatnonzero((prices > 0) & (values > 0))
    ratio = np.zeros_like(values)
    ratio[priced] = values[priced] / prices[priced]
    order = sorted(priced, key=lambda i: (-ratio[i], prices[i], i))

    spent = ExactSum()
    taken: list[int] = []
    marginal = None
    for i in order:
        if spent.subtract_from(budget, prices[i]) < 0:
            marginal = i
            break
        spent.add(float(prices[i]))
        taken.append(i)

    if marginal is not None:
        lam = float(ratio[marginal])
        taken = [i for i in taken if ratio[i] > lam]
    elif taken:
        lam = float(ratio[taken[-1]]) * (1 - 1e-9)
    else:
        lam = 1.0

    # reconcile with the floating-point bid rule used by the environment
    taken_set = set(taken)
    for _ in range(64):
        wins = values[priced] / lam > prices[priced]
        intruders = [i for i, w in zip(priced, wins) if w and i not in taken_set]
        if intruders:
            lam = float(np.nextafter(lam, np.inf))
            continue
        losers = {i for i, w in zip(priced, wins) if not w and i in taken_set}
        taken_set -= losers
        break
    winners = tuple(sorted(taken_set.union(int(i) for i in free)))
    return OracleResult(
        lambda_star=lam,
        r_star=math.fsum(values[list(winners)]),
        spend=math.fsum(prices[list(winners)]),
        winners=winners,
    )


def brute_force_value(impressions: Sequence[Impression], budget: float) -> float:
    """Exact 0/1 knapsack optimum by enumerating every subset."""
    if len(impressions) > BRUTE_FORCE_LIMIT:
        raise SizeLimitError(
            f"brute force is limited to {BRUTE_FORCE_LIMIT} items, got {len(impressions)}")
    if not impressions:
        return 0.0
    values, prices = _arrays(impressions)
    val = np.zeros(1)
    cost = np.zeros(1)
    for v, c in zip(values, prices):
        val = np.concatenate([val, val + v])
        cost = np.concatenate([cost, cost + c])
    feasible = cost <= budget
    return float(val[feasible].max())


def r_over_rstar(r: float, r_star: float) -> float:
    if not r_star > 0:
        raise ValueError(f"R* must be > 0, got {r_star}")
    return r / r_star


@dataclass(frozen=True)
class DeviationGroup:
    lower: float
    upper: float

    def contains(self, x: float) -> bool:
        return self.lower <= x < self.upper

    @property
    def label(self) -> str:
        def pct(x):
            return "inf" if math.isinf(x) else f"{round(x * 100)}%"
        return f"[{pct(self.lower)},{pct(self.upper)})"


_EDGES = (-1.0, -0.8, -0.4, -0.2, 0.0, 0.2, 0.4, 0.8, 1.6, math.inf)
DEVIATION_GROUPS = tuple(DeviationGroup(lo, hi) for lo, hi in zip(_EDGES, _EDGES[1:]))


def lambda_deviation(lambda0: float, lambda_star: float) -> float:
    if not lambda_star > 0:
        raise ValueError(f"lambda* must be > 0, got {lambda_star}")
    return (lambda0 - lambda_star) / lambda_star


def deviation_group(lambda0: float, lambda_star: float) -> DeviationGroup:
    d = lambda_deviation(lambda0, lambda_star)
    for group in DEVIATION_GROUPS:
        if group.contains(d):
            return group
    # λ0 > 0 keeps d above -1; clamp anything pathological into the edges
    return DEVIATION_GROUPS[0] if d < 0 else DEVIATION_GROUPS[-1]


# --- reward-design equivalence on tiny deterministic MDPs -------------------

Transition = Union[int, Mapping[int, float]]


@dataclass(frozen=True)
class DeterministicMDP:
    """``transitions[s][a]`` is the next state, ``rewards[s][a]`` the immediate reward."""

    transitions: Sequence[Sequence[Transition]]
    rewards: Sequence[Sequence[float]]
    initial_state: Union[int, Sequence[int]]
    horizon: int

    @property
    def n_states(self) -> int:
        return len(self.transitions)

    @property
    def n_actions(self) -> int:
        return len(self.transitions[0])


@dataclass(frozen=True)
class EquivalenceReport:
    optimal_return: float
    shaped_optimal: tuple[tuple[int, ...], ...]
    shaped_returns: tuple[float, ...]
    holds: bool


def _validated(mdp: DeterministicMDP) -> tuple[list[list[int]], int]:
    init = mdp.initial_state
    if not isinstance(init, (int, np.integer)):
        starts = set(init)
        if len(starts) != 1:
            raise PreconditionError("the MDP must have exactly one initial state")
        init = starts.pop()
    if not 1 <= mdp.horizon <= 5:
        raise PreconditionError(f"horizon must be in [1, 5], got {mdp.horizon}")
    n_states, n_actions = mdp.n_states, mdp.n_actions
    if n_actions ** mdp.horizon > 100_000:
        raise PreconditionError("too many action sequences to enumerate")
    nxt: list[list[int]] = []
    for s, row in enumerate(mdp.transitions):
        if len(row) != n_actions or len(mdp.rewards[s]) != n_actions:
            raise PreconditionError(f"state {s} does not define every action")
        out = []
        for a, tr in enumerate(row):
            if isinstance(tr, Mapping):
                support = [k for k, p in tr.items() if p > 0]
                if len(support) != 1:
                    raise PreconditionError(f"transition ({s}, {a}) is not deterministic")
                tr = support[0]
            if not 0 <= tr < n_states:
                raise PreconditionError(f"transition ({s}, {a}) leads to unknown state {tr}")
            out.append(int(tr))
        nxt.append(out)
    if not 0 <= init < n_states:
        raise PreconditionError(f"unknown initial state {init}")
    return nxt, int(init)


def shaped_reward_equivalence(mdp: DeterministicMDP, time_in_key: bool = True
                              ) -> EquivalenceReport:
    """Compare optimal behaviour under the immediate and the episode-max reward.

    Every action sequence from the initial state is one episode. The shaped
    reward of a visited pair is the best total immediate return among all
    episodes that visit it. Keys carry the step index by default, matching
    an observation that includes the current time step.
    """
    nxt, s0 = _validated(mdp)
    episodes = []
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.horizon):
        s, keys, rewards = s0, [], []
        for t, a in enumerate(actions):
            keys.append((t, s, a) if time_in_key else (s, a))
            rewards.append(float(mdp.rewards[s][a]))
            s = nxt[s][a]
        episodes.append((actions, keys, math.fsum(rewards)))

    best_return = max(ret for _, _, ret in episodes)
    shaped: dict = {}
    for _, keys, ret in episodes:
        for k in keys:
            shaped[k] = max(shaped.get(k, -math.inf), ret)

    shaped_totals = [math.fsum(shaped[k] for k in keys) for _, keys, _ in episodes]
    top = max(shaped_totals)
    chosen = [i for i, v in enumerate(shaped_totals) if v == top]
    returns = tuple(episodes[i][2] for i in chosen)
    return EquivalenceReport(
        optimal_return=best_return,
        shaped_optimal=tuple(episodes[i][0] for i in chosen),
        shaped_returns=returns,
        holds=all(r == best_return for r in returns),
    )


def theorem_equivalence_check(mdp: DeterministicMDP) -> bool:
    return shaped_reward_equivalence(mdp).holds
