"""DQN λ-control agent: replay, ε schedule, adaptive exploration and training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .bidder import (DEFAULT_RATES, STATE_DIM, ActionSpace, EnvSnapshot, Norms, apply_action,
                     build_state, initial_state)
from .env import EpisodeData, reset, step
from .episode import EpisodeReport, episode_budget
from .nn import MLP, TrainConfig, sgd_step
from .oracle import OracleResult, optimal_lambda_greedy
from .rewardnet import EpisodeRecord, RewardNet


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 1.0
    epsilon_floor: float = 0.05
    epsilon_cap: float = 0.95
    adaptive_epsilon_min: float = 0.5
    anneal_rate: float = 2e-5
    target_sync: int = 100
    episodes: int = 100
    adaptive: bool = True
    reward: str = "rewardnet"  # or "immediate"
    rates: tuple[float, ...] = DEFAULT_RATES
    hidden: tuple[int, ...] = (100, 100, 100)
    learning_rate: float = 0.001
    momentum: float = 0.95
    batch_size: int = 32
    replay_capacity: int = 100_000
    reward_store_capacity: int = 100_000
    reward_replay_capacity: int = 50_000
    lrfu_decay: float = 0.5
    key_grid: float = 1e-2
    # typical episode return; rewards are divided by it so Q stays O(1)
    return_ref: Optional[float] = None
    # score sampled transitions with the current RewardNet instead of the stored value
    relabel_rewards: bool = True

    def __post_init__(self):
        if not 0 <= self.epsilon_floor <= self.epsilon_cap <= 1:
            raise ValueError("need 0 <= epsilon_floor <= epsilon_cap <= 1")
        if not 0 <= self.adaptive_epsilon_min <= 1:
            raise ValueError("adaptive_epsilon_min must be in [0, 1]")
        if self.target_sync < 1:
            raise ValueError("target_sync must be >= 1")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.reward not in ("rewardnet", "immediate"):
            raise ValueError(f"reward must be 'rewardnet' or 'immediate', got {self.reward!r}")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        if self.anneal_rate < 0:
            raise ValueError("anneal_rate must be >= 0")

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.momentum, self.batch_size)


def epsilon_at(t: int, cfg: AgentConfig) -> float:
    if t < 0:
        raise ValueError("step must be >= 0")
    return max(cfg.epsilon_cap - cfg.anneal_rate * t, cfg.epsilon_floor)


def is_unimodal(q_values: Sequence[float]) -> bool:
    """Non-decreasing up to a peak, then non-increasing; plateaus allowed."""
    q = list(q_values)
    i = 1
    while i < len(q) and q[i] >= q[i - 1]:
        i += 1
    while i < len(q) and q[i] <= q[i - 1]:
        i += 1
    return i >= len(q)


def select_action(q_values: Sequence[float], epsilon: float, cfg: AgentConfig,
                  rng: np.random.Generator) -> tuple[int, float]:
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    eps = epsilon
    if cfg.adaptive and not is_unimodal(q_values):
        eps = max(epsilon, cfg.adaptive_epsilon_min)
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(len(q_values))), eps
    return int(np.argmax(q_values)), eps


@dataclass
class Transition:
    state: np.ndarray
    action: int
    next_state: np.ndarray
    reward: float
    terminal: bool


class ReplayMemory:
    """Bounded FIFO of transitions with seeded uniform sampling."""

    def __init__(self, capacity: int = 100_000, n_state: int = STATE_DIM,
                 rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.states = np.zeros((capacity, n_state))
        self.next_states = np.zeros((capacity, n_state))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, tr: Transition) -> None:
        i = self._next
        self.states[i] = tr.state
        self.next_states[i] = tr.next_state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.terminal[i] = tr.terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _row(self, i: int) -> Transition:
        return Transition(self.states[i].copy(), int(self.actions[i]),
                          self.next_states[i].copy(), float(self.rewards[i]),
                          bool(self.terminal[i]))

    def transitions(self) -> list[Transition]:
        """Contents from oldest to newest."""
        start = self._next - self._size
        return [self._row((start + k) % self.capacity) for k in range(self._size)]

    def sample(self, n: int) -> list[Transition]:
        return [self._row(i) for i in self.sample_indices(n)]

    def sample_indices(self, n: int) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay memory")
        return self.rng.integers(0, self._size, size=n)


def td_targets(batch: Sequence[Transition], target_net: MLP, gamma: float) -> np.ndarray:
    if not batch:
        raise ValueError("batch is empty")
    rewards = np.array([tr.reward for tr in batch], dtype=float)
    terminal = np.array([tr.terminal for tr in batch], dtype=bool)
    next_states = np.stack([tr.next_state for tr in batch])
    return _targets(rewards, terminal, next_states, target_net, gamma)


def _targets(rewards, terminal, next_states, target_net: MLP, gamma: float) -> np.ndarray:
    y = rewards.astype(float).copy()
    live = ~terminal
    if gamma != 0 and live.any():
        y[live] += gamma * target_net.forward(next_states[live]).max(axis=1)
    return y


@dataclass(frozen=True)
class Lambda0Policy:
    """How an episode's starting λ is chosen.

    ``fixed`` uses ``value``; ``previous_oracle`` uses λ* of the previous
    episode; ``oracle_deviation`` multiplies a reference λ* by
    ``1 + d`` with ``d`` uniform in ``[dev_low, dev_high]``. The reference
    is the previous episode's λ* when ``use_previous`` is set, else the
    current episode's own λ*.
    """

    kind: str = "oracle_deviation"
    value: float = 1.0
    dev_low: float = 0.0
    dev_high: float = 0.0
    use_previous: bool = True

    def __post_init__(self):
        if self.kind not in ("fixed", "previous_oracle", "oracle_deviation"):
            raise ValueError(f"unknown lambda0 policy {self.kind!r}")
        if self.kind == "fixed" and not self.value > 0:
            raise ValueError("fixed lambda0 must be > 0")
        if not -1 < self.dev_low <= self.dev_high:
            raise ValueError("need -1 < dev_low <= dev_high")

    def draw(self, current: OracleResult, previous: Optional[OracleResult],
             rng: np.random.Generator) -> float:
        if self.kind == "fixed":
            return self.value
        ref = previous if (previous is not None and
                           (self.kind == "previous_oracle" or self.use_previous)) else current
        if self.kind == "previous_oracle":
            return ref.lambda_star
        return ref.lambda_star * (1.0 + rng.uniform(self.dev_low, self.dev_high))


@dataclass
class TrainingLog:
    reports: list[EpisodeReport] = field(default_factory=list)


class DRLBAgent:
    def __init__(self, cfg: AgentConfig, norms: Norms, seed: int = 0, n_state: int = STATE_DIM):
        self.cfg = cfg
        self.norms = norms
        self.space = ActionSpace(cfg.rates)
        seeds = np.random.SeedSequence(seed).spawn(5)
        init_rng, self.explore_rng, replay_rng, reward_rng, self.lambda_rng = (
            np.random.default_rng(s) for s in seeds)
        n_act = len(self.space)
        self.qnet = MLP((n_state, *cfg.hidden, n_act), init_rng)
        self.target = self.qnet.copy()
        self.memory = ReplayMemory(cfg.replay_capacity, n_state, replay_rng)
        self.rewardnet: Optional[RewardNet] = None
        if cfg.reward == "rewardnet":
            self.rewardnet = RewardNet(
                n_state, n_act, reward_rng, cfg.hidden, cfg.train_config,
                cfg.reward_store_capacity, cfg.reward_replay_capacity, cfg.lrfu_decay,
                cfg.key_grid)
        self.return_ref = cfg.return_ref or 1.0
        self.global_step = 0
        self.T = 1

    def set_return_ref(self, value: float) -> None:
        if not value > 0:
            raise ValueError("return reference must be > 0")
        self.return_ref = value
        if self.rewardnet is not None:
            self.rewardnet.target_scale = 1.0 / value

    def reward_for(self, state: np.ndarray, action: int, immediate: float, T: int) -> float:
        """Training reward in Q units: immediate value, or the RewardNet estimate spread over T."""
        if self.rewardnet is None:
            return immediate / self.return_ref
        return self.rewardnet.predict(state, action) / (self.return_ref * T)

    def learn(self) -> float:
        m = self.memory
        idx = m.sample_indices(self.cfg.batch_size)
        rewards = m.rewards[idx]
        if self.rewardnet is not None and self.cfg.relabel_rewards:
            rewards = (self.rewardnet.predict_batch(m.states[idx], m.actions[idx])
                       / (self.return_ref * self.T))
        y = _targets(rewards, m.terminal[idx], m.next_states[idx], self.target, self.cfg.gamma)
        return sgd_step(self.qnet, m.states[idx], y, m.actions[idx], self.cfg.train_config)

    def run_episode(self, data: EpisodeData, budget: float, lambda0: float, train: bool,
                    oracle: Optional[OracleResult] = None) -> EpisodeReport:
        if oracle is None:
            oracle = optimal_lambda_greedy(data.impressions, budget)
        T = self.T = data.T
        env = reset(data, budget, lambda0)
        report = EpisodeReport(data.episode_id, 0, 0.0, 0.0, oracle.r_star, lambda0,
                               oracle.lambda_star)
        record = EpisodeRecord()
        s = initial_state(T).as_array()
        lam = lambda0
        losses = []
        eps_used = 0.0
        while not env.terminal:
            if train and self.rewardnet is not None:
                self.rewardnet.train_step()
            q = self.qnet.forward(s)
            if train:
                a, eps_used = select_action(q, epsilon_at(self.global_step, self.cfg),
                                            self.cfg, self.explore_rng)
            else:
                a = int(np.argmax(q))
            lam = apply_action(lam, a, self.space)
            snap = EnvSnapshot.of(env)
            out = step(env, lam)
            s_next = build_state(snap, out, T, self.norms).as_array()
            report.step_rewards.append(out.reward)
            report.step_costs.append(out.cost)
            report.lambdas.append(lam)
            if train:
                r = self.reward_for(s, a, out.reward, T)
                self.memory.push(Transition(s, a, s_next, r, env.terminal))
                record.add(s, a, out.reward)
                if len(self.memory) >= self.cfg.batch_size:
                    losses.append(self.learn())
                self.global_step += 1
                if self.global_step % self.cfg.target_sync == 0:
                    self.target.copy_from(self.qnet)
            s = s_next
        if train and self.rewardnet is not None:
            self.rewardnet.finish_episode(record)
        report.steps = env.t
        report.total_reward = env.cumulative_value
        report.total_cost = env.spent
        report.epsilon_end = eps_used if train else 0.0
        report.loss_mean = float(np.mean(losses)) if losses else float("nan")
        return report


EpisodeCallback = Callable[[int, DRLBAgent, EpisodeReport], None]


def run_training(episodes: Sequence[EpisodeData], budget_ratio: float, cfg: AgentConfig,
                 norms: Norms, lambda0_policy: Lambda0Policy, seed: int = 0,
                 oracles: Optional[Sequence[OracleResult]] = None,
                 callback: Optional[EpisodeCallback] = None,
                 agent: Optional[DRLBAgent] = None) -> tuple[DRLBAgent, TrainingLog]:
    """Train for ``cfg.episodes`` episodes, cycling through ``episodes`` in order."""
    if not episodes:
        raise ValueError("training dataset is empty")
    budgets = [episode_budget(ep, budget_ratio) for ep in episodes]
    if oracles is None:
        oracles = [optimal_lambda_greedy(ep.impressions, b) for ep, b in zip(episodes, budgets)]
    agent = agent or DRLBAgent(cfg, norms, seed)
    if cfg.return_ref is None:
        agent.set_return_ref(math.fsum(o.r_star for o in oracles) / len(oracles))
    log = TrainingLog()
    prev: Optional[OracleResult] = None
    for k in range(cfg.episodes):
        i = k % len(episodes)
        lam0 = lambda0_policy.draw(oracles[i], prev, agent.lambda_rng)
        report = agent.run_episode(episodes[i], budgets[i], lam0, True, oracles[i])
        report.episode = str(k + 1)
        log.reports.append(report)
        prev = oracles[i]
        if callback is not None:
            callback(k + 1, agent, report)
    return agent, log
