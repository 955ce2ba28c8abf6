import numpy as np
import pytest
from hypothesis import given, strategies as st

from drlb.bidder import (DEFAULT_RATES, ActionSpace, EnvSnapshot, Norms, apply_action, build_state,
                         compute_bid, initial_state)
from drlb.env import StepOutcome


@pytest.mark.parametrize("v,lam,bid", [(0.02, 0.1, 0.2), (0.0, 5.0, 0.0), (0.05, 0.05, 1.0)])
def test_compute_bid(v, lam, bid):
    assert compute_bid(v, lam) == pytest.approx(bid, rel=1e-15)


def test_compute_bid_rejects_bad_lambda():
    with pytest.raises(ValueError):
        compute_bid(0.1, 0.0)


def test_apply_action_rates():
    space = ActionSpace()
    assert space.rates == DEFAULT_RATES and len(space) == 7
    assert apply_action(1.0, 6, space) == pytest.approx(1.08)
    assert apply_action(2.0, space.identity_index, space) == 2.0
    assert apply_action(1.0, 0, space) == pytest.approx(0.92)
    with pytest.raises(ValueError):
        apply_action(1.0, 7, space)


@pytest.mark.parametrize("rates", [(), (0.1, 0.0), (-1.0, 0.0), (0.0, 0.0)])
def test_action_space_validation(rates):
    with pytest.raises(ValueError):
        ActionSpace(rates)


@given(st.lists(st.integers(0, 6), max_size=200), st.floats(1e-3, 1e3))
def test_lambda_stays_positive(actions, lam):
    space = ActionSpace()
    for a in actions:
        lam = apply_action(lam, a, space)
    assert lam > 0


def _outcome(reward=0.0, cost=0.0, wins=0, auctions=0):
    return StepOutcome(reward, cost, wins, auctions, 1000 * cost / wins if wins else 0.0,
                       wins / auctions if auctions else 0.0)


def test_build_state_features():
    s = build_state(EnvSnapshot(9, 200.0, 100.0), _outcome(2.0, 10.0, 4, 8), 96, Norms(5000.0, 4.0))
    assert s.bcr == pytest.approx(-0.1)
    assert s.t_norm == 10 / 96 and s.rol_norm == 86 / 96
    assert s.budget_left_norm == pytest.approx(0.45)
    assert s.cpm_norm == pytest.approx(0.5) and s.win_rate == 0.5
    assert s.last_reward_norm == 0.5


def test_zero_win_slot_and_empty_budget():
    s = build_state(EnvSnapshot(0, 1.0, 0.0), _outcome(auctions=5), 4, Norms())
    assert s.cpm_norm == 0 and s.win_rate == 0 and s.bcr == 0


def test_initial_state_and_purity():
    assert initial_state(96).as_array().tolist() == [0, 1, 1, 0, 0, 0, 0]
    args = (EnvSnapshot(3, 10.0, 7.0), _outcome(1.0, 2.0, 1, 3), 12, Norms(2.0, 3.0))
    assert np.array_equal(build_state(*args).as_array(), build_state(*args).as_array())
