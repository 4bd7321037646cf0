import math
import warnings

import numpy as np
import pytest

from uavlink.channel import BTU, UTB
from uavlink.env import Position
from uavlink.estimator import (EstimatorBank, Mlp, ReplayBuffer, TrainConfig,
                               adam_step, build_input, forward,
                               loss_and_grads, mape, record_and_maybe_train,
                               train_step, xavier_init)

XV = Position(0.6, 0.4, 0.1)
XB = Position(0.25, 0.375, 0.025)


def test_build_input_length_and_blocks():
    s = build_input(BTU, XV, XB, k=3, n_antennas=8)
    assert s.shape == (14,)
    assert np.allclose(s[:3], [0.6, 0.4, 0.1])
    assert np.allclose(s[3:6], [0.25, 0.375, 0.025])
    assert np.allclose(s[6:], 3 / 8)


def test_build_input_direction_swap():
    s_ul = build_input(BTU, XV, XB, k=2, n_antennas=4)
    s_dl = build_input(UTB, XV, XB, k=2, n_antennas=4)
    assert np.allclose(s_ul[:3], s_dl[3:6])
    assert np.allclose(s_ul[3:6], s_dl[:3])
    assert np.allclose(s_ul[6:], s_dl[6:])


def test_build_input_region_normalization():
    s = build_input(BTU, Position(1.0, 2.0, 0.5), XB, k=1, n_antennas=2,
                    region_km=2.0)
    assert np.allclose(s[:3], [0.5, 1.0, 0.25])


def test_build_input_index_range():
    with pytest.raises(ValueError):
        build_input(BTU, XV, XB, k=0, n_antennas=4)
    with pytest.raises(ValueError):
        build_input(BTU, XV, XB, k=5, n_antennas=4)


def test_xavier_bound_and_mean():
    rng = np.random.default_rng(0)
    w = xavier_init((6, 6), rng)
    bound = math.sqrt(6.0 / 12.0)
    assert np.abs(w).max() <= bound
    big = xavier_init((100, 100), rng)
    sigma = bound_big = math.sqrt(6.0 / 200.0) / math.sqrt(3.0)
    assert abs(big.mean()) < 3.0 * sigma / 100.0


def test_biases_start_at_zero():
    net = Mlp.create((4, 8, 8, 2), np.random.default_rng(1))
    for b in net.biases:
        assert np.all(b == 0.0)


def test_forward_zero_weights_returns_bias():
    net = Mlp.create((4, 8, 8, 2), np.random.default_rng(2))
    for w in net.weights:
        w[:] = 0.0
    net.biases[-1][:] = [1.5, -0.5]
    assert np.allclose(forward(net, np.zeros(4)), [1.5, -0.5])


def test_forward_positive_homogeneity():
    # single positive path with zero biases: ReLU is positively homogeneous
    net = Mlp.create((1, 1, 1, 2), np.random.default_rng(3))
    for w in net.weights:
        w[:] = 1.0
    out1 = forward(net, np.array([1.0]))
    out3 = forward(net, np.array([3.0]))
    assert np.allclose(out3, 3.0 * out1)


def test_forward_shape_mismatch():
    net = Mlp.create((4, 8, 8, 2), np.random.default_rng(4))
    with pytest.raises(ValueError):
        forward(net, np.zeros(5))


def _grad_check(net, x, y, step=1e-5):
    _, (g_w, g_b) = loss_and_grads(net, x, y)
    worst = 0.0
    for params, grads in ((net.weights, g_w), (net.biases, g_b)):
        for p, g in zip(params, grads):
            flat_p = p.reshape(-1)
            flat_g = g.reshape(-1)
            for i in range(flat_p.size):
                orig = flat_p[i]
                flat_p[i] = orig + step
                lp, _ = loss_and_grads(net, x, y)
                flat_p[i] = orig - step
                lm, _ = loss_and_grads(net, x, y)
                flat_p[i] = orig
                fd = (lp - lm) / (2.0 * step)
                denom = max(abs(fd), abs(flat_g[i]), 1e-6)
                worst = max(worst, abs(fd - flat_g[i]) / denom)
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(5):
        net = Mlp.create((6, 10, 10, 2), rng)
        x = rng.standard_normal((8, 6))
        y = rng.standard_normal((8, 2))
        assert _grad_check(net, x, y) < 1e-4


def test_adam_first_step_is_signed_lr():
    net = Mlp.create((2, 3, 3, 2), np.random.default_rng(6), lr=1e-3)
    before = [w.copy() for w in net.weights]
    g_w = [np.ones_like(w) * s for w, s in zip(net.weights, (1.0, -2.0, 0.5))]
    g_b = [np.zeros_like(b) for b in net.biases]
    adam_step(net, (g_w, g_b))
    assert net.step == 1
    for w0, w1, s in zip(before, net.weights, (1.0, -2.0, 0.5)):
        assert np.allclose(w1 - w0, -1e-3 * np.sign(s), rtol=1e-6)


def test_adam_zero_gradient_keeps_params():
    net = Mlp.create((2, 3, 3, 2), np.random.default_rng(7))
    # seed nonzero moments, then apply a zero gradient
    g = ([np.ones_like(w) for w in net.weights],
         [np.ones_like(b) for b in net.biases])
    adam_step(net, g)
    before = [w.copy() for w in net.weights]
    m_before = [m.copy() for m in net.m_w]
    zero = ([np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases])
    adam_step(net, zero)
    for w0, w1 in zip(before, net.weights):
        assert not np.allclose(w0, w1)  # bias-corrected moments still push
    for m0, m1 in zip(m_before, net.m_w):
        assert np.allclose(m1, 0.9 * m0)  # first moment decays


def test_adam_deterministic():
    a = Mlp.create((2, 3, 3, 2), np.random.default_rng(8))
    b = Mlp.create((2, 3, 3, 2), np.random.default_rng(8))
    g = ([np.ones_like(w) for w in a.weights],
         [np.ones_like(bb) for bb in a.biases])
    adam_step(a, g)
    adam_step(b, g)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_replay_buffer_fifo_eviction():
    buf = ReplayBuffer(capacity=3, input_dim=1, target_dim=1)
    for i in range(5):
        buf.push(np.array([float(i)]), np.array([float(i)]))
    assert len(buf) == 3
    x, _ = buf.contents()
    assert set(x.reshape(-1)) == {2.0, 3.0, 4.0}


def test_replay_buffer_distinct_minibatch():
    buf = ReplayBuffer(capacity=100, input_dim=1)
    for i in range(50):
        buf.push(np.array([float(i)]), np.array([0.0, 0.0]))
    rng = np.random.default_rng(9)
    x, _ = buf.sample(50, rng)
    assert len(np.unique(x.reshape(-1))) == 50
    with pytest.raises(ValueError):
        buf.sample(51, rng)


def test_train_step_underfull_buffer():
    cfg = TrainConfig(minibatch=8)
    net = Mlp.create((2, 4, 4, 2), np.random.default_rng(10))
    buf = ReplayBuffer(16, 2)
    buf.push(np.zeros(2), np.zeros(2))
    assert train_step(net, buf, cfg, np.random.default_rng(0)) is None


def test_train_step_exact_net_keeps_weights():
    # net already reproduces the targets: loss 0, parameters unchanged
    cfg = TrainConfig(minibatch=4)
    net = Mlp.create((2, 4, 4, 2), np.random.default_rng(11))
    buf = ReplayBuffer(16, 2)
    x = np.array([0.3, 0.7])
    y = forward(net, x)
    for _ in range(4):
        buf.push(x, y)
    before = [w.copy() for w in net.weights]
    loss = train_step(net, buf, cfg, np.random.default_rng(1))
    assert loss == pytest.approx(0.0, abs=1e-28)
    # batch BLAS reproduces the stored targets to the last ulp only, so the
    # weights stay put up to Adam's epsilon-scaled response to that noise
    for w0, w1 in zip(before, net.weights):
        assert np.allclose(w0, w1, atol=1e-9)


def test_train_step_loss_decreases():
    cfg = TrainConfig(minibatch=16, lr=3e-3)
    rng = np.random.default_rng(12)
    net = Mlp.create((3, 16, 16, 2), rng, lr=cfg.lr)
    buf = ReplayBuffer(64, 3)
    w_true = rng.standard_normal((2, 3))
    for _ in range(64):
        x = rng.standard_normal(3)
        buf.push(x, w_true @ x)
    losses = [train_step(net, buf, cfg, rng) for _ in range(100)]
    assert np.mean(losses[-20:]) < 0.5 * np.mean(losses[:20])


def test_full_batch_training_reaches_tiny_loss():
    # linearly generated targets are exactly representable: drive loss < 1e-6
    cfg = TrainConfig(minibatch=32, lr=5e-3)
    rng = np.random.default_rng(13)
    net = Mlp.create((3, 24, 24, 2), rng, lr=cfg.lr)
    buf = ReplayBuffer(32, 3)
    w_true = 0.5 * rng.standard_normal((2, 3))
    for _ in range(32):
        x = rng.uniform(0, 1, 3)
        buf.push(x, w_true @ x)
    loss = None
    for _ in range(2500):
        loss = train_step(net, buf, cfg, rng)
    assert loss < 1e-6


def test_record_and_maybe_train_interval():
    cfg = TrainConfig(minibatch=2, train_interval=5)
    net = Mlp.create((2, 4, 4, 2), np.random.default_rng(14))
    buf = ReplayBuffer(16, 2)
    rng = np.random.default_rng(2)
    for _ in range(4):
        buf.push(np.zeros(2), np.ones(2))
    before = [w.copy() for w in net.weights]
    assert record_and_maybe_train(net, buf, 7, (np.zeros(2), np.ones(2)),
                                  cfg, rng) is None
    for w0, w1 in zip(before, net.weights):
        assert np.array_equal(w0, w1)
    loss = record_and_maybe_train(net, buf, 10, (np.zeros(2), np.ones(2)),
                                  cfg, rng)
    assert loss is not None and loss > 0


def test_mape_values():
    assert mape([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mape([1.2], [1.0]) == pytest.approx(0.2)
    assert mape([1 + 0j], [0 + 1j]) == pytest.approx(math.sqrt(2.0))


def test_mape_excludes_zero_targets():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        val = mape([1.0, 5.0], [1.0, 0.0])
    assert val == 0.0
    assert any("zero-magnitude" in str(w.message) for w in caught)
    with pytest.raises(ValueError):
        mape([1.0], [0.0])


def test_networks_are_independent():
    cfg = TrainConfig(minibatch=4, hidden=(8, 8))
    bank = EstimatorBank.create(2, 1.0, cfg, np.random.default_rng(15))
    frozen = {key: [w.copy() for w in net.weights]
              for key, net in bank.nets.items() if key != (BTU, 1)}
    rng = np.random.default_rng(3)
    buf = bank.buffers[BTU, 1]
    net = bank.nets[BTU, 1]
    for i in range(8):
        buf.push(np.full(8, 0.1 * i), np.array([1.0, 0.0]))
    for _ in range(5):
        train_step(net, buf, cfg, rng)
    for key, weights in frozen.items():
        for w0, w1 in zip(weights, bank.nets[key].weights):
            assert np.array_equal(w0, w1)


def test_bank_roundtrip(tmp_path):
    cfg = TrainConfig(hidden=(8, 8))
    bank = EstimatorBank.create(3, 1.0, cfg, np.random.default_rng(16))
    rng = np.random.default_rng(4)
    theta = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    for ep in range(1, 70):
        bank.record_episode(ep, XV, XB, theta, theta, rng)
    est_before = bank.estimate(XV, XB)
    path = tmp_path / "weights.json"
    bank.save(path)
    loaded = EstimatorBank.load(path, cfg)
    est_after = loaded.estimate(XV, XB)
    assert np.allclose(est_before[0], est_after[0])
    assert np.allclose(est_before[1], est_after[1])
    net = loaded.nets[BTU, 1]
    assert net.step > 0  # Adam state survives the round trip
