"""Episode-level bookkeeping shared by the agent and the baselines."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .env import EnvState, EpisodeData, StepOutcome, reset, step
from .oracle import OracleResult, optimal_lambda_greedy

REPORT_FIELDS = ("episode", "steps", "total_reward", "total_cost", "r_over_rstar",
                 "epsilon_end", "loss_mean")

# (state before the slot, previous outcome or None) -> λ for the slot
LambdaPolicy = Callable[[EnvState, Optional[StepOutcome]], float]


@dataclass
class EpisodeReport:
    episode: str
    steps: int
    total_reward: float
    total_cost: float
    r_star: float
    lambda0: float = float("nan")
    lambda_star: float = float("nan")
    epsilon_end: float = float("nan")
    loss_mean: float = float("nan")
    step_rewards: list[float] = field(default_factory=list, repr=False)
    step_costs: list[float] = field(default_factory=list, repr=False)
    lambdas: list[float] = field(default_factory=list, repr=False)

    @property
    def r_over_rstar(self) -> float:
        return self.total_reward / self.r_star if self.r_star > 0 else float("nan")

    def row(self) -> list[str]:
        return [self.episode, str(self.steps), _fmt(self.total_reward), _fmt(self.total_cost),
                _fmt(self.r_over_rstar), _fmt(self.epsilon_end), _fmt(self.loss_mean)]


def _fmt(x: float) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def reports_csv(reports: Iterable[EpisodeReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def episode_budget(data: EpisodeData, budget_ratio: float) -> float:
    return budget_ratio * data.total_market_cost


def run_policy(data: EpisodeData, budget: float, lambda0: float, policy: LambdaPolicy,
               oracle: Optional[OracleResult] = None) -> EpisodeReport:
    """Play one episode, asking ``policy`` for the λ of every slot."""
    if oracle is None and data.impressions and budget > 0:
        oracle = optimal_lambda_greedy(data.impressions, budget)
    r_star = oracle.r_star if oracle else 0.0
    lam_star = oracle.lambda_star if oracle else float("nan")
    if budget <= 0:
        return EpisodeReport(data.episode_id, 0, 0.0, 0.0, r_star, lambda0, lam_star)

    state = reset(data, budget, lambda0)
    report = EpisodeReport(data.episode_id, 0, 0.0, 0.0, r_star, lambda0, lam_star)
    last = None
    while not state.terminal:
        lam = policy(state, last)
        last = step(state, lam)
        report.step_rewards.append(last.reward)
        report.step_costs.append(last.cost)
        report.lambdas.append(lam)
    report.steps = state.t
    report.total_reward = state.cumulative_value
    report.total_cost = state.spent
    return report
