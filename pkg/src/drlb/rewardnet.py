"""Episode-max reward memo with LRFU eviction, and the network that regresses it.

The memo maps a quantized (state, action) key to the best total episode
return seen among episodes that visited it. Each finished episode pushes
its pairs with their updated memo values into a replay buffer, from which
the reward network is trained by plain regression.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .nn import MLP, TrainConfig, sgd_step

StateActionKey = tuple[int, ...]


def make_key(state: Sequence[float], action: int, grid: float = 1e-2) -> StateActionKey:
    """Round every feature to the nearest multiple of ``grid`` and append the action."""
    cells = []
    for x in np.asarray(state, dtype=float).reshape(-1):
        if not math.isfinite(x):
            raise ValueError("state features must be finite")
        cells.append(math.floor(x / grid + 0.5))
    return (*cells, int(action))


@dataclass
class _Entry:
    best_return: float
    score: float
    last_access: float
    seq: int
    version: int = 0


class RewardStore:
    """Bounded memo ``M`` keyed by (state, action).

    LRFU bookkeeping: an access at time ``now`` sets
    ``score = 1 + 2**(-decay * (now - last_access)) * score``. When the
    store overflows, the entry with the smallest score decayed to ``now``
    is evicted; ties go to the older last access, then the older insertion.

    Decaying every score by the same factor keeps their order, so the heap
    uses the time-free priority ``log2(score) + decay * last_access``.
    """

    def __init__(self, capacity: int = 100_000, decay: float = 0.5):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if decay < 0:
            raise ValueError("decay must be >= 0")
        self.capacity = capacity
        self.decay = decay
        self._entries: dict[StateActionKey, _Entry] = {}
        self._heap: list = []
        self._seq = 0
        self.evicted: list[StateActionKey] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def get(self, key: StateActionKey, default: float = -math.inf) -> float:
        entry = self._entries.get(key)
        return entry.best_return if entry else default

    def score(self, key: StateActionKey, now: float) -> float:
        e = self._entries[key]
        return e.score * 2.0 ** (-self.decay * (now - e.last_access))

    def update(self, key: StateActionKey, value: float, now: float) -> float:
        """Max-update ``key`` with ``value`` at time ``now``; returns the stored value."""
        e = self._entries.get(key)
        if e is None:
            self._seq += 1
            e = self._entries[key] = _Entry(value, 1.0, now, self._seq)
        else:
            e.score = 1.0 + 2.0 ** (-self.decay * (now - e.last_access)) * e.score
            e.last_access = now
            e.best_return = max(e.best_return, value)
            e.version += 1
        priority = math.log2(e.score) + self.decay * e.last_access
        heapq.heappush(self._heap, (priority, e.last_access, e.seq, e.version, key))
        if len(self._heap) > 4 * len(self._entries) + 64:
            self._compact()
        return e.best_return

    def _compact(self) -> None:
        self._heap = [item for item in self._heap
                      if item[4] in self._entries and self._entries[item[4]].version == item[3]]
        heapq.heapify(self._heap)

    def evict_overflow(self, now: float) -> list[StateActionKey]:
        out = []
        while len(self._entries) > self.capacity:
            _, _, _, version, key = heapq.heappop(self._heap)
            e = self._entries.get(key)
            if e is None or e.version != version:
                continue
            del self._entries[key]
            out.append(key)
        self.evicted.extend(out)
        return out

    def items(self) -> Iterable[tuple[StateActionKey, float]]:
        return ((k, e.best_return) for k, e in self._entries.items())

    def dump_csv(self, now: float) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "best_return", "lrfu_score"])
        for k, e in self._entries.items():
            w.writerow([";".join(str(c) for c in k), repr(e.best_return), repr(self.score(k, now))])
        return buf.getvalue()


class RewardReplay:
    """FIFO ring of ``(state, action, memo value)`` rows (the D2 buffer)."""

    def __init__(self, capacity: int, n_state: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, n_state))
        self.actions = np.zeros(capacity, dtype=int)
        self.values = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def append(self, row: tuple[np.ndarray, int, float]) -> None:
        state, action, value = row
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.values[i] = value
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def __getitem__(self, k: int) -> tuple[np.ndarray, int, float]:
        """Row ``k`` counted from the oldest surviving entry."""
        if not -self._size <= k < self._size:
            raise IndexError(k)
        i = (self._next - self._size + k % self._size) % self.capacity
        return self.states[i].copy(), int(self.actions[i]), float(self.values[i])

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = rng.integers(0, self._size, size=n)
        return self.states[idx], self.actions[idx], self.values[idx]


@dataclass
class EpisodeRecord:
    pairs: list[tuple[np.ndarray, int]] = field(default_factory=list)
    total_return: float = 0.0

    def add(self, state: np.ndarray, action: int, reward: float) -> None:
        self.pairs.append((np.asarray(state, dtype=float), int(action)))
        self.total_return += reward


def finalize_episode(store: RewardStore, record: EpisodeRecord, replay: RewardReplay,
                     now: float, grid: float = 1e-2) -> None:
    """Max-update every visited pair with the episode return and queue it for regression."""
    if not record.pairs:
        raise ValueError("episode record is empty")
    for state, action in record.pairs:
        key = make_key(state, action, grid)
        value = store.update(key, record.total_return, now)
        replay.append((state, action, value))
        store.evict_overflow(now)


def predict_reward(net: MLP, state, action: int) -> float:
    return float(net.forward(np.asarray(state, dtype=float))[action])


def train_rewardnet_step(net: MLP, replay: RewardReplay, batch_size: int, cfg: TrainConfig,
                         rng: np.random.Generator, target_scale: float = 1.0) -> Optional[float]:
    """One regression step on a sampled mini-batch; ``None`` while the buffer is too small."""
    if len(replay) <= batch_size:
        return None
    states, actions, values = replay.sample(rng, batch_size)
    return sgd_step(net, states, values * target_scale, actions, cfg)


class RewardNet:
    """Memo, replay and regression network bundled for the training loop.

    Memo values are raw episode returns; the network is fitted on
    ``return * target_scale`` and :meth:`predict` maps back to raw units.
    """

    def __init__(self, n_state: int, n_actions: int, rng: np.random.Generator,
                 hidden: Sequence[int] = (100, 100, 100), train_cfg: TrainConfig = TrainConfig(),
                 store_capacity: int = 100_000, replay_capacity: int = 50_000,
                 lrfu_decay: float = 0.5, grid: float = 1e-2, target_scale: float = 1.0):
        self.net = MLP((n_state, *hidden, n_actions), rng)
        self.store = RewardStore(store_capacity, lrfu_decay)
        self.replay = RewardReplay(replay_capacity, n_state)
        self.cfg = train_cfg
        self.rng = rng
        self.grid = grid
        self.target_scale = target_scale
        self.episodes_seen = 0

    def train_step(self) -> Optional[float]:
        return train_rewardnet_step(self.net, self.replay, self.cfg.batch_size, self.cfg,
                                    self.rng, self.target_scale)

    def predict(self, state, action: int) -> float:
        return predict_reward(self.net, state, action) / self.target_scale

    def predict_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        out = self.net.forward(states)
        return out[np.arange(len(actions)), actions] / self.target_scale

    def finish_episode(self, record: EpisodeRecord) -> None:
        self.episodes_seen += 1
        finalize_episode(self.store, record, self.replay, float(self.episodes_seen), self.grid)
