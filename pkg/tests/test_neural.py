import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgsm.errors import DataError
from sgsm.neural import (Adam, Conv1d, Flatten, Linear, Network, Relu, TrainConfig, Unsqueeze,
                         adam_step, backward, forward, gradcheck, load_networks, mse_cosine_loss,
                         save_networks, softmax_cross_entropy)


def _fd_loss_grad(y, t, h=1e-6):
    g = np.zeros_like(y)
    for idx in np.ndindex(y.shape):
        yp, ym = y.copy(), y.copy()
        yp[idx] += h
        ym[idx] -= h
        g[idx] = (mse_cosine_loss(yp, t)[0] - mse_cosine_loss(ym, t)[0]) / (2 * h)
    return g


# ---------------------------------------------------------------- forward

def test_identity_linear():
    lin = Linear(4, 4)
    lin.weight[...] = np.eye(4)
    lin.bias[...] = 0
    x = np.arange(8, dtype=np.float32).reshape(2, 4)
    np.testing.assert_array_equal(forward(Network([lin]), x), x)


def test_relu():
    out = Relu().forward(np.array([-1.0, 2.0, 0.0], dtype=np.float32))
    np.testing.assert_array_equal(out, [0, 2, 0])


def test_conv_all_ones_kernel():
    conv = Conv1d(1, 1, 3, 1)
    conv.weight[...] = 1
    conv.bias[...] = 0
    out = conv.forward(np.ones((1, 1, 5), dtype=np.float32))
    np.testing.assert_array_equal(out[0, 0], [3, 3, 3])


def test_conv_matches_direct_loops(rng):
    conv = Conv1d(3, 4, 5, 2, rng=rng)
    x = rng.standard_normal((2, 3, 21)).astype(np.float32)
    out = conv.forward(x)
    expected = np.zeros((2, 4, 9))
    for n in range(2):
        for o in range(4):
            for t in range(9):
                expected[n, o, t] = conv.bias[o] + np.sum(conv.weight[o] * x[n, :, 2 * t:2 * t + 5])
    np.testing.assert_allclose(out, expected, atol=1e-5)


def test_shape_mismatch_raises():
    with pytest.raises(DataError):
        Network([Linear(3, 2)]).forward(np.ones((1, 4), dtype=np.float32))
    with pytest.raises(DataError):
        Conv1d(2, 1, 3).forward(np.ones((1, 1, 8), dtype=np.float32))


def test_output_shape_without_data():
    net = Network([Unsqueeze(), Conv1d(1, 16, 7, 2), Relu(), Conv1d(16, 32, 5, 2), Relu(),
                   Flatten(), Linear(32 * 29, 10)])
    assert net.output_shape((5, 129)) == (5, 10)
    x = np.random.default_rng(0).standard_normal((5, 129)).astype(np.float32)
    assert net.forward(x).shape == (5, 10)


# ---------------------------------------------------------------- loss

def test_loss_identical_vectors():
    t = np.array([0.3, -1.2, 2.0])
    assert mse_cosine_loss(t, t)[0] == pytest.approx(0.0, abs=1e-12)


def test_loss_antiparallel():
    loss, _ = mse_cosine_loss(np.array([-1.0, 0.0]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(4.0, abs=1e-6)


def test_loss_hand_value():
    loss, _ = mse_cosine_loss(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
    # mean((0,1)^2) = 0.5, cos = 1/sqrt(2)
    assert loss == pytest.approx(0.5 + 1 - 1 / np.sqrt(2), abs=1e-6)
    assert loss == pytest.approx(0.79289, abs=1e-5)


def test_loss_batch_is_mean_of_rows(rng):
    y = rng.standard_normal((4, 6))
    t = rng.standard_normal((4, 6))
    rows = [mse_cosine_loss(y[i], t[i])[0] for i in range(4)]
    assert mse_cosine_loss(y, t)[0] == pytest.approx(np.mean(rows), abs=1e-12)


def test_loss_zero_vectors_finite():
    loss, grad = mse_cosine_loss(np.zeros(5), np.zeros(5))
    assert loss == pytest.approx(1.0)
    assert np.all(np.isfinite(grad))


def test_loss_gradient_finite_differences():
    for seed in range(100):
        r = np.random.default_rng(seed)
        y = r.standard_normal(7)
        t = r.standard_normal(7)
        _, g = mse_cosine_loss(y, t)
        fd = _fd_loss_grad(y, t)
        err = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
        assert err.max() < 1e-3


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 20))
def test_loss_nonnegative_and_zero_iff_equal(seed, n):
    r = np.random.default_rng(seed)
    y = r.standard_normal(n)
    t = r.standard_normal(n)
    assert mse_cosine_loss(y, t)[0] >= 0
    if not np.allclose(y, t):
        assert mse_cosine_loss(y, t)[0] > 0
    assert mse_cosine_loss(t, t)[0] == pytest.approx(0.0, abs=1e-12)


def test_loss_shape_mismatch():
    with pytest.raises(DataError):
        mse_cosine_loss(np.ones(3), np.ones(4))


def test_softmax_cross_entropy_gradient(rng):
    z = rng.standard_normal((5, 3))
    y = np.array([0, 2, 1, 1, 0])
    _, g = softmax_cross_entropy(z, y)
    h = 1e-6
    fd = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd[idx] = (softmax_cross_entropy(zp, y)[0] - softmax_cross_entropy(zm, y)[0]) / (2 * h)
    np.testing.assert_allclose(g, fd, atol=1e-6)


# ---------------------------------------------------------------- backward

def test_zero_loss_gradient_gives_zero_param_grads(rng):
    net = Network([Linear(4, 5, rng=rng), Relu(), Linear(5, 3, rng=rng)])
    x = rng.standard_normal((2, 4)).astype(np.float32)
    grads = backward(net, x, np.zeros((2, 3), dtype=np.float32))
    assert all(np.all(g == 0) for g in grads)


def test_single_linear_outer_product(rng):
    lin = Linear(3, 2, rng=rng)
    x = rng.standard_normal((1, 3)).astype(np.float32)
    g = rng.standard_normal((1, 2)).astype(np.float32)
    dw, db = backward(Network([lin]), x, g)
    np.testing.assert_allclose(dw, np.outer(g[0], x[0]), atol=1e-6)
    np.testing.assert_allclose(db, g[0], atol=1e-7)


def _small_nets(rng):
    yield Network([Linear(6, 8, rng=rng), Relu(), Linear(8, 5, rng=rng), Relu(), Linear(5, 6, rng=rng)]), (3, 6), (3, 6)
    yield Network([Unsqueeze(), Conv1d(1, 3, 3, 2, rng=rng), Relu(), Flatten(), Linear(3 * 7, 4, rng=rng)]), (2, 16), (2, 4)
    yield Network([Unsqueeze(), Conv1d(1, 4, 5, 2, rng=rng), Relu(), Conv1d(4, 2, 3, 1, rng=rng), Relu(),
                   Flatten(), Linear(2 * 9, 8, rng=rng), Relu(), Linear(8, 3, rng=rng)]), (2, 25), (2, 3)


def test_gradcheck_random_networks():
    rng = np.random.default_rng(3)
    for net, xs, ts in _small_nets(rng):
        x = rng.standard_normal(xs)
        t = rng.standard_normal(ts)
        assert gradcheck(net, x, t) < 1e-3


def test_backward_float32_agrees_with_float64(rng):
    net = list(_small_nets(rng))[2][0]
    x = rng.standard_normal((2, 25)).astype(np.float32)
    t = rng.standard_normal((2, 3)).astype(np.float32)
    _, g = mse_cosine_loss(net.forward(x), t)
    net.backward(g)
    g32 = [a.copy() for a in net.grads]
    net64 = net.astype(np.float64)
    _, g = mse_cosine_loss(net64.forward(x.astype(np.float64)), t.astype(np.float64))
    net64.backward(g)
    for a, b in zip(g32, net64.grads):
        np.testing.assert_allclose(a, b, rtol=1e-3, atol=1e-5)


class DoubledLinear(Linear):
    def backward(self, grad):
        out = super().backward(grad)
        self.grads = [2 * g for g in self.grads]
        return out


def test_gradcheck_detects_scaled_gradient(rng):
    net = Network([DoubledLinear(4, 3, rng=rng)])
    assert gradcheck(net, rng.standard_normal((2, 4)), rng.standard_normal((2, 3))) > 0.4


def test_gradcheck_degenerate_zero_case(rng):
    net = Network([Linear(4, 3, rng=rng)])
    err = gradcheck(net, np.zeros((1, 4)), np.zeros((1, 3)))
    assert np.isfinite(err)


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_no_change():
    p = np.array([1.0, -2.0], dtype=np.float32)
    opt = Adam([p], lr=1e-3)
    opt.step([np.zeros_like(p)])
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_moves_against_gradient_sign():
    p = np.array([0.0, 0.0])
    opt = Adam([p], lr=1e-2)
    for _ in range(100):
        opt.step([np.array([0.5, -3.0])])
    assert p[0] < 0 < p[1]


def test_adam_quadratic_bowl():
    w = np.array([1.0])
    opt = Adam([w], lr=1e-3)
    for _ in range(5000):
        opt.step([2 * w])
    assert abs(w[0]) < 0.05


def test_adam_step_shape_check():
    p = np.zeros(3)
    with pytest.raises(DataError):
        adam_step([p], [np.zeros(4)], Adam([p]), 1e-3)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip(tmp_path, rng):
    net = Network([Unsqueeze(), Conv1d(1, 2, 3, 2, rng=rng), Relu(), Flatten(), Linear(2 * 7, 3, rng=rng)])
    save_networks(tmp_path / "model", {"enc": net}, {"seed": 5, "epochs": 2})
    manifest = json.loads((tmp_path / "model.sgtf.json").read_text())
    assert manifest["seed"] == 5 and manifest["epochs"] == 2
    assert [layer["kind"] for layer in manifest["networks"]["enc"]["layers"]] == \
        ["Unsqueeze", "Conv1d", "Relu", "Flatten", "Linear"]
    nets, _ = load_networks(tmp_path / "model")
    for a, b in zip(net.params, nets["enc"].params):
        assert a.tobytes() == b.tobytes()
