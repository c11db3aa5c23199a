import numpy as np
import pytest
from hypothesis import given, strategies as st

from ascon_sca import nn
from gradcheck import max_rel_error


@pytest.mark.parametrize("act", nn.ACTIVATIONS)
def test_dense_gradient(act):
    rng = np.random.default_rng(1)
    layer = nn.Dense(4, 3, act, rng)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, 3))

    def f():
        return float(np.sum(layer.forward(x)[0] * w))

    _, cache = layer.forward(x)
    dx, grads = layer.backward(w, cache)
    assert max_rel_error(f, layer.params, grads) < 1e-4


def test_mlp_gradient_including_input():
    rng = np.random.default_rng(2)
    net = nn.MLP([3, 6, 5, 2], "tanh", "sigmoid", rng)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 2))
    y, caches = net.forward(x)
    dx, grads = net.backward(w, caches)
    assert max_rel_error(lambda: float(np.sum(net.forward(x)[0] * w)), net.params, grads) < 1e-4
    xp = {"x": x}
    assert max_rel_error(lambda: float(np.sum(net.forward(xp["x"])[0] * w)), xp, {"x": dx}) < 1e-4


def test_lstm_five_step_bptt_gradient():
    rng = np.random.default_rng(3)
    cell = nn.LSTMCell(3, 4, rng)
    xs = rng.normal(size=(2, 5, 3))
    w = rng.normal(size=(2, 5, 4))
    wc = rng.normal(size=(2, 4))

    def f():
        hs, (_, c), _ = cell.forward_sequence(xs)
        return float(np.sum(hs * w) + np.sum(c * wc))

    hs, (_, c), caches = cell.forward_sequence(xs)
    dxs, _, _, grads = cell.backward_sequence(w, caches, dc_last=wc)
    assert max_rel_error(f, cell.params, grads) < 1e-4
    xp = {"xs": xs}

    def fx():
        hs, (_, c), _ = cell.forward_sequence(xp["xs"])
        return float(np.sum(hs * w) + np.sum(c * wc))

    assert max_rel_error(fx, xp, {"xs": dxs}) < 1e-4


def test_lstm_hidden_bounded():
    rng = np.random.default_rng(4)
    cell = nn.LSTMCell(2, 8, rng)
    hs, _, _ = cell.forward_sequence(50 * rng.normal(size=(3, 20, 2)))
    assert np.abs(hs).max() <= 1.0


def test_forward_is_pure():
    rng = np.random.default_rng(5)
    net = nn.MLP([3, 4, 1], "relu", "linear", rng)
    x = rng.normal(size=(6, 3))
    a, _ = net.forward(x)
    b, _ = net.forward(x)
    np.testing.assert_array_equal(a, b)


def test_backward_without_cache_fails():
    with pytest.raises(RuntimeError):
        nn.Dense(2, 2).backward(np.zeros((1, 2)), None)


def test_initialization_bounds_and_forget_bias():
    rng = np.random.default_rng(6)
    layer = nn.Dense(16, 8, "linear", rng)
    assert np.abs(layer.W).max() <= 0.25
    cell = nn.LSTMCell(3, 5, rng)
    np.testing.assert_array_equal(cell.b[10:15], np.ones(5))


def test_mse_examples():
    x = np.arange(4.0)
    assert nn.mse(x, x) == 0.0
    assert nn.mse([0.0], [2.0]) == 4.0
    p, t = np.array([1.0, 3.0]), np.array([0.0, 0.0])
    np.testing.assert_allclose(nn.mse_grad(p, t), 2 * (p - t) / 2)
    with pytest.raises(ValueError):
        nn.mse([1.0], [1.0, 2.0])


def test_adam_zero_gradient_decays_moments():
    p = {"w": np.array([1.0, -2.0])}
    st_ = nn.AdamState()
    nn.adam_step(p, {"w": np.array([0.5, 0.5])}, st_)
    m_before, v_before = st_.m["w"].copy(), st_.v["w"].copy()
    nn.adam_step(p, {"w": np.zeros(2)}, st_)
    np.testing.assert_allclose(st_.m["w"], 0.9 * m_before)
    np.testing.assert_allclose(st_.v["w"], 0.999 * v_before)


def test_adam_pure_zero_gradient_from_fresh_state():
    p = {"w": np.array([1.0, -2.0])}
    nn.adam_step(p, {"w": np.zeros(2)}, nn.AdamState())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


@given(st.floats(-100, 100).filter(lambda g: abs(g) > 1e-3))
def test_adam_first_step_closed_form(g):
    p = {"w": np.array([0.0])}
    s = nn.AdamState(lr=0.01)
    nn.adam_step(p, {"w": np.array([g])}, s)
    expect = -0.01 * g / (abs(g) + 1e-8)
    assert p["w"][0] == pytest.approx(expect, rel=1e-12)


def test_adam_deterministic_and_rejects_non_finite():
    def run():
        p = {"w": np.array([0.3, 0.1])}
        s = nn.AdamState()
        for k in range(5):
            nn.adam_step(p, {"w": np.array([k, -1.0])}, s)
        return p["w"]

    np.testing.assert_array_equal(run(), run())
    with pytest.raises(FloatingPointError):
        nn.adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, nn.AdamState())


def test_checkpoint_roundtrip_and_corruption(tmp_path):
    rng = np.random.default_rng(7)
    params = nn.LSTMCell(3, 4, rng, "enc.").params
    path = tmp_path / "m.ckpt"
    nn.save_params(params, path, extra={"epochs": 3})
    back, extra = nn.load_params(path)
    assert extra == {"epochs": 3}
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])
    blob = bytearray(path.read_bytes())
    blob[-12] ^= 1
    path.write_bytes(bytes(blob))
    with pytest.raises(nn.CheckpointError):
        nn.load_params(path)
