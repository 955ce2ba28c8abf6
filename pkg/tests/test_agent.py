import numpy as np
import pytest
from hypothesis import given, strategies as st

from drlb.agent import (AgentConfig, DRLBAgent, Lambda0Policy, ReplayMemory, Transition,
                        epsilon_at, is_unimodal, run_training, select_action, td_targets)
from drlb.bidder import Norms
from drlb.env import EpisodeData, Impression
from drlb.episode import reports_csv
from drlb.nn import MLP
from drlb.oracle import OracleResult, optimal_lambda_greedy

from conftest import episode


@pytest.mark.parametrize("rate,t,eps", [(1e-5, 0, 0.95), (2e-5, 0, 0.95), (2e-5, 45_000, 0.05),
                                        (1e-5, 10_000, 0.85), (2e-5, 10_000, 0.75),
                                        (1e-5, 45_000, 0.5), (1e-5, 90_000, 0.05)])
def test_epsilon_schedule(rate, t, eps):
    assert epsilon_at(t, AgentConfig(anneal_rate=rate)) == pytest.approx(eps, abs=1e-12)


@given(st.integers(0, 10**7), st.floats(0, 1e-3))
def test_epsilon_bounds(t, rate):
    assert 0.05 <= epsilon_at(t, AgentConfig(anneal_rate=rate)) <= 0.95


def test_epsilon_rejects_negative_step():
    with pytest.raises(ValueError):
        epsilon_at(-1, AgentConfig())


@pytest.mark.parametrize("q,expected", [([1, 2, 3, 2, 1], True), ([1, 3, 2, 3], False),
                                        ([1, 2, 3], True), ([3, 2, 1], True), ([5], True),
                                        ([1, 1, 2, 2, 1, 1], True), ([2, 1, 2], False)])
def test_is_unimodal(q, expected):
    assert is_unimodal(q) is expected


def test_select_action_greedy_and_adaptive():
    rng = np.random.default_rng(0)
    assert select_action([0, 5, 1], 0.0, AgentConfig(), rng) == (1, 0.0)
    _, used = select_action([1, 3, 2, 3], 0.1, AgentConfig(), rng)
    assert used == 0.5
    _, used = select_action([1, 3, 2, 3], 0.1, AgentConfig(adaptive=False), rng)
    assert used == 0.1
    assert select_action([2, 2, 1], 0.0, AgentConfig(), rng)[0] == 0
    with pytest.raises(ValueError):
        select_action([1, 2], 1.5, AgentConfig(), rng)


def test_select_action_uniform_when_epsilon_one():
    rng = np.random.default_rng(42)
    n, k = 10_000, 7
    counts = np.bincount([select_action(np.arange(k), 1.0, AgentConfig(), rng)[0]
                          for _ in range(n)], minlength=k)
    p = 1 / k
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=9), st.floats(0.01, 100))
def test_greedy_choice_invariant_to_positive_scaling(q, k):
    q = np.array(q)
    cfg = AgentConfig(adaptive=False)
    rng = np.random.default_rng(0)
    assert select_action(q, 0.0, cfg, rng)[0] == select_action(q * k, 0.0, cfg, rng)[0]


def test_td_targets():
    net = MLP((2, 3), zero=True)
    net.biases[0][:] = [0.5, 2.0, 1.0]
    batch = [Transition(np.zeros(2), 0, np.zeros(2), 2.0, True),
             Transition(np.zeros(2), 1, np.zeros(2), 1.0, False)]
    assert td_targets(batch, net, 1.0).tolist() == [2.0, 3.0]
    assert td_targets(batch[1:], net, 0.0).tolist() == [1.0]
    with pytest.raises(ValueError):
        td_targets([], net, 1.0)


def test_replay_memory_fifo_and_capacity():
    mem = ReplayMemory(5, 2, np.random.default_rng(0))
    for i in range(8):
        mem.push(Transition(np.full(2, i), i % 7, np.full(2, i + 1), float(i), False))
        assert len(mem) <= 5
    assert [tr.reward for tr in mem.transitions()] == [3.0, 4.0, 5.0, 6.0, 7.0]
    assert all(3.0 <= tr.reward <= 7.0 for tr in mem.sample(50))


def test_lambda0_policy():
    rng = np.random.default_rng(0)
    cur, prev = OracleResult(2.0, 1.0, 1.0), OracleResult(4.0, 1.0, 1.0)
    assert Lambda0Policy("fixed", value=3.0).draw(cur, prev, rng) == 3.0
    assert Lambda0Policy("previous_oracle").draw(cur, prev, rng) == 4.0
    assert Lambda0Policy("previous_oracle").draw(cur, None, rng) == 2.0
    d = Lambda0Policy("oracle_deviation", dev_low=-0.5, dev_high=0.5, use_previous=False)
    assert all(1.0 <= d.draw(cur, prev, rng) <= 3.0 for _ in range(100))
    with pytest.raises(ValueError):
        Lambda0Policy("nonsense")


def _tiny_data(n=3, T=4, seed=0):
    rng = np.random.default_rng(seed)
    eps = []
    for e in range(n):
        imps = [Impression(t, float(rng.uniform(0.01, 0.1)), float(rng.uniform(0.5, 1.5)))
                for t in range(T) for _ in range(5)]
        eps.append(EpisodeData(f"e{e}", T, tuple(imps)))
    return eps


def test_zero_episodes_leaves_networks_untouched():
    cfg = AgentConfig(episodes=0, hidden=(8,))
    agent, log = run_training(_tiny_data(), 0.25, cfg, Norms(), Lambda0Policy("fixed", 1.0))
    fresh = DRLBAgent(cfg, Norms(), 0)
    assert log.reports == []
    assert all(np.array_equal(a, b) for a, b in zip(agent.qnet.parameters(), fresh.qnet.parameters()))


@pytest.mark.parametrize("reward", ["rewardnet", "immediate"])
def test_training_is_deterministic(reward):
    cfg = AgentConfig(episodes=6, hidden=(16, 16), batch_size=4, reward=reward, target_sync=5)
    pol = Lambda0Policy("oracle_deviation", dev_low=-0.3, dev_high=0.3)
    a, log_a = run_training(_tiny_data(), 0.25, cfg, Norms(), pol, seed=3)
    b, log_b = run_training(_tiny_data(), 0.25, cfg, Norms(), pol, seed=3)
    assert reports_csv(log_a.reports) == reports_csv(log_b.reports)
    assert all(np.array_equal(x, y) for x, y in zip(a.qnet.parameters(), b.qnet.parameters()))


def test_target_network_is_a_stale_copy_between_syncs():
    cfg = AgentConfig(episodes=1, hidden=(8,), batch_size=2, target_sync=3, reward="immediate")
    agent = DRLBAgent(cfg, Norms(), 0)
    data = _tiny_data(1, T=7)[0]
    snapshots = []
    orig_learn = agent.learn

    def learn():
        loss = orig_learn()
        snapshots.append((agent.global_step + 1, [p.copy() for p in agent.target.parameters()],
                          [p.copy() for p in agent.qnet.parameters()]))
        return loss

    agent.learn = learn
    agent.run_episode(data, 5.0, 1.0, True)
    prev_target = None
    for step_no, target, online in snapshots:
        if prev_target is not None and step_no % 3 != 1:
            # between syncs the target does not move
            assert all(np.array_equal(a, b) for a, b in zip(target, prev_target))
        prev_target = target
    # right after the step-3 sync the target equals the online net of that moment
    agent2 = DRLBAgent(cfg, Norms(), 0)
    agent2.run_episode(_tiny_data(1, T=3)[0], 5.0, 1.0, True)
    assert agent2.global_step == 3
    assert all(np.array_equal(a, b) for a, b in zip(agent2.target.parameters(),
                                                      agent2.qnet.parameters()))


def _toy_episode():
    """Three slots, two impressions each; budget 1.5 cannot buy every winner."""
    slots = [[(0.9, 0.5), (0.2, 0.45)], [(0.5, 0.5), (0.3, 0.55)], [(1.2, 0.5), (0.4, 0.45)]]
    return episode(slots, T=3)


def test_toy_environment_greedy_policy_reaches_optimum():
    """On a three-slot episode the trained greedy policy attains the best return
    reachable by any action sequence (found by enumeration) in at least 19 of 20 runs."""
    import itertools
    from drlb.bidder import ActionSpace, apply_action
    from drlb.env import reset, step

    data, budget, lam0 = _toy_episode(), 1.5, 1.0
    space = ActionSpace((-0.5, 0.0, 1.0))

    def play(actions):
        s, lam = reset(data, budget, lam0), lam0
        for a in actions:
            lam = apply_action(lam, a, space)
            step(s, lam)
        return s.cumulative_value

    best = max(play(seq) for seq in itertools.product(range(3), repeat=3))
    cfg = AgentConfig(episodes=300, rates=space.rates, hidden=(32, 32), batch_size=16,
                      anneal_rate=3e-3, target_sync=20, reward="rewardnet")
    oracle = optimal_lambda_greedy(data.impressions, budget)
    hits = 0
    for seed in range(20):
        agent, _ = run_training([data], budget / data.total_market_cost, cfg, Norms(cpm_ref=500.0, value_ref=1.0),
                                Lambda0Policy("fixed", value=lam0), seed=seed, oracles=[oracle])
        hits += agent.run_episode(data, budget, lam0, False, oracle).total_reward == best
    assert hits >= 19
