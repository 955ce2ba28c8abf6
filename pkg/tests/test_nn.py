import numpy as np
import pytest
from hypothesis import given, strategies as st

from drlb.nn import (MLP, CheckpointFormatError, TrainConfig, forward, gradient_check,
                     load_checkpoint, save_checkpoint, sgd_step)

# produced once by a seeded (7, 100, 100, 100, 7) net on linspace(0.1, 0.7, 7)
GOLDEN = [-0.1132638280646171, -0.09041843653352119, -0.02380155947132335, -0.12745699058043666,
          0.0671239079519322, 0.09790204832548156, -0.01885105119838783]


def test_zero_net_outputs_zero():
    net = MLP((7, 100, 100, 100, 7), zero=True)
    assert np.all(forward(net, np.arange(7.0)) == 0)


def test_identity_path():
    net = MLP((1, 1, 1), zero=True)
    net.weights[0][0, 0] = net.weights[1][0, 0] = 1.0
    assert forward(net, [2.0]).tolist() == [2.0]
    # the hidden ReLU clips a negative input
    assert forward(net, [-2.0]).tolist() == [0.0]


def test_golden_forward():
    net = MLP((7, 100, 100, 100, 7), np.random.default_rng(123))
    out = forward(net, np.linspace(0.1, 0.7, 7))
    np.testing.assert_allclose(out, GOLDEN, rtol=1e-12, atol=1e-15)


def test_forward_shape_errors():
    net = MLP((3, 4, 2))
    with pytest.raises(ValueError):
        forward(net, np.zeros(4))
    with pytest.raises(ValueError):
        forward(net, np.zeros((2, 2, 3)))
    assert forward(net, np.zeros((5, 3))).shape == (5, 2)


def test_zero_learning_rate_leaves_parameters():
    net = MLP((3, 5, 2), np.random.default_rng(1))
    before = [p.copy() for p in net.parameters()]
    loss = sgd_step(net, np.ones((4, 3)), np.ones(4), [0, 1, 0, 1], TrainConfig(0.0, 0.9))
    assert loss > 0
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))


def test_single_linear_unit_gradient():
    net = MLP((1, 1), zero=True)
    loss = sgd_step(net, [[1.0]], [1.0], [0], TrainConfig(0.1, 0.0))
    assert loss == 1.0
    # gradient is -2 (1 - 0) 1 = -2, so w moves to +0.2
    assert net.weights[0][0, 0] == pytest.approx(0.2)
    assert net.biases[0][0] == pytest.approx(0.2)


def test_momentum_zero_is_plain_sgd():
    rng = np.random.default_rng(5)
    x, y, idx = rng.normal(size=(8, 4)), rng.normal(size=8), rng.integers(0, 3, 8)
    a = MLP((4, 6, 3), np.random.default_rng(2))
    b = a.copy()
    for _ in range(5):
        sgd_step(a, x, y, idx, TrainConfig(0.01, 0.0))
        _, gw, gb = b.gradients(x, y, idx)
        for p, g in zip(b.weights + b.biases, gw + gb):
            p -= 0.01 * g
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_allclose(p, q, rtol=0, atol=1e-15)


def test_momentum_buffer_update():
    net = MLP((1, 1), zero=True)
    cfg = TrainConfig(0.1, 0.5)
    sgd_step(net, [[1.0]], [1.0], [0], cfg)   # buf = -2, w = 0.2
    sgd_step(net, [[1.0]], [1.0], [0], cfg)   # pred 0.4, grad -1.2, buf = -2.2, w = 0.42
    assert net.vel_w[0][0, 0] == pytest.approx(-2.2)
    assert net.weights[0][0, 0] == pytest.approx(0.42)


def test_only_selected_outputs_receive_gradient():
    net = MLP((2, 3), np.random.default_rng(0))
    _, gw, gb = net.gradients(np.ones((2, 2)), [1.0, 2.0], [1, 1])
    assert np.all(gw[0][:, [0, 2]] == 0) and gb[0][0] == 0 and gb[0][2] == 0


def test_regression_converges():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(8, 2))
    y = x[:, 0] - 0.5 * x[:, 1]
    net = MLP((2, 16, 1), np.random.default_rng(4))
    cfg = TrainConfig(0.01, 0.9)
    for step in range(10_000):
        loss = sgd_step(net, x, y, np.zeros(8, dtype=int), cfg)
        if loss < 1e-6:
            break
    assert loss < 1e-6


def test_gradient_check_examples():
    rng = np.random.default_rng(11)
    net = MLP((7, 10, 10, 7), rng)
    assert gradient_check(net, rng.normal(size=7), 0.3, 2) <= 1e-4
    zero = MLP((7, 100, 100, 100, 7), zero=True)
    assert gradient_check(zero, np.ones(7), 0.0, 0) == 0.0
    one = MLP((1, 1), zero=True)
    one.weights[0][0, 0] = 0.7
    assert gradient_check(one, [1.3], 0.2, 0) <= 1e-6


@given(st.integers(0, 10_000))
def test_gradient_check_random_nets(seed):
    rng = np.random.default_rng(seed)
    net = MLP((7, 20, 20, 7), rng)
    assert gradient_check(net, rng.normal(size=7), float(rng.normal()), int(rng.integers(7))) <= 1e-4


def test_checkpoint_round_trip():
    net = MLP((7, 100, 100, 100, 7), np.random.default_rng(9))
    back = load_checkpoint(save_checkpoint(net))
    assert back.layer_sizes == net.layer_sizes
    assert all(np.array_equal(a, b) for a, b in zip(net.parameters(), back.parameters()))
    zero = load_checkpoint(save_checkpoint(MLP((2, 3, 1), zero=True)))
    assert all(np.all(p == 0) for p in zero.parameters())


def test_checkpoint_format_is_documented_layout():
    net = MLP((1, 2), zero=True)
    net.weights[0][0] = [0.5, -1.0]
    net.biases[0][:] = [0.25, 0.0]
    assert save_checkpoint(net) == b"MLP v1 1 2\n0.5 -1.0\n0.25 0.0\n"


@pytest.mark.parametrize("blob,offset", [
    (b"XYZ v1 1 2\n", 0),
    (b"MLP v1 1 2\n0.5 -1.0\n0.25", 24),
    (b"MLP v1 1 2\n0.5 oops\n0.25 0.0\n", 15),
    (b"MLP v1 1 2\n0.5 inf\n0.25 0.0\n", 15),
    (b"MLP v1 1 2\n0.5 1\n0.25 0.0 9\n", 26),
    (b"MLP v1 1 x\n", 9),
])
def test_malformed_checkpoints(blob, offset):
    with pytest.raises(CheckpointFormatError) as info:
        load_checkpoint(blob)
    assert info.value.offset == offset
