"""Independent brute-force references used by several test modules."""

import itertools
import math

import mpmath

from drlb.rewardnet import make_key

mpmath.mp.dps = 60


def episode_max_values(episodes, grid=1e-2):
    """Shaped reward per quantized key: best total return among episodes visiting it.

    ``episodes`` is a list of (pairs, total_return) with pairs of (state, action).
    """
    best = {}
    for pairs, total in episodes:
        for state, action in pairs:
            k = make_key(state, action, grid)
            best[k] = max(best.get(k, -math.inf), total)
    return best


class LRFUReference:
    """Straight-line LRFU cache: decayed scores recomputed for every entry on eviction.

    Scores are kept in 60-digit arithmetic so near ties cannot be invented by rounding.
    """

    def __init__(self, capacity, decay):
        self.capacity = capacity
        self.decay = mpmath.mpf(decay)
        self.entries = {}          # key -> [score, last_access, insertion_seq]
        self.seq = 0
        self.evicted = []

    def access(self, key, now):
        e = self.entries.get(key)
        if e is None:
            self.seq += 1
            self.entries[key] = [mpmath.mpf(1), now, self.seq]
        else:
            e[0] = 1 + mpmath.power(2, -self.decay * (now - e[1])) * e[0]
            e[1] = now

    def evict(self, now):
        while len(self.entries) > self.capacity:
            def rank(item):
                k, (score, last, seq) = item
                return (score * mpmath.power(2, -self.decay * (now - last)), last, seq)
            victim = min(self.entries.items(), key=rank)[0]
            del self.entries[victim]
            self.evicted.append(victim)


def mdp_optimal_return(mdp):
    """Optimal finite-horizon return by backward induction over (t, state)."""
    n = len(mdp.transitions)
    v = [0] * n
    for _ in range(mdp.horizon):
        v = [max(mdp.rewards[s][a] + v[mdp.transitions[s][a]]
                 for a in range(len(mdp.transitions[s]))) for s in range(n)]
    return v[mdp.initial_state]


def shaped_policy_returns(mdp):
    """Immediate-reward return of every action sequence that maximizes the summed
    episode-max reward, with the shaped reward built by enumerating every episode."""
    seqs = list(itertools.product(range(len(mdp.transitions[0])), repeat=mdp.horizon))
    runs = []
    for seq in seqs:
        s, keys, total = mdp.initial_state, [], 0
        for t, a in enumerate(seq):
            keys.append((t, s, a))
            total += mdp.rewards[s][a]
            s = mdp.transitions[s][a]
        runs.append((keys, total))
    shaped = {}
    for keys, total in runs:
        for k in keys:
            shaped[k] = max(shaped.get(k, -math.inf), total)
    scores = [sum(shaped[k] for k in keys) for keys, _ in runs]
    top = max(scores)
    return [total for (keys, total), sc in zip(runs, scores) if sc == top]
