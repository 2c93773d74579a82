import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from twincl import model as nn
from twincl.errors import InvalidArgumentError, NonFiniteLossError, ShapeMismatchError


def generic_params(seed=0, hidden=6):
    """Random biases keep every unit away from its ReLU kink."""
    p = nn.init_params(4, 3, hidden=hidden, embedding_dim=4, rng=seed)
    rng = np.random.default_rng(seed + 100)
    for name in p:
        if name.endswith(".b"):
            p[name] = 0.1 * rng.normal(size=p[name].shape)
    return p


@pytest.fixture
def params():
    return generic_params()


def numeric_grad(fn, params, step=1e-5):
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            hi = fn()
            arr[idx] = old - step
            lo = fn()
            arr[idx] = old
            g[idx] = (hi - lo) / (2 * step)
        out[name] = g
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-50, 50)))
def test_embedding_unit_norm_and_simplex(x):
    res = nn.forward(nn.init_params(4, 3, hidden=6, embedding_dim=4, rng=1), x)
    assert abs(np.linalg.norm(res.embedding) - 1.0) < 1e-6
    assert abs(res.class_probs.sum() - 1.0) < 1e-9 and np.all(res.class_probs >= 0)


@pytest.mark.parametrize("tiny", [1e-9, 1e-200, 1e-310])
def test_near_zero_preactivation_is_normalised(params, tiny):
    params["f1.W"][:] = 0.0
    params["f1.b"][:] = [tiny, -tiny, 0.0, 0.0]
    v = nn.forward(params, np.ones(4)).embedding
    assert np.allclose(v, [2 ** -0.5, -(2 ** -0.5), 0.0, 0.0])


def test_all_zero_preactivation_falls_back_to_basis(params):
    params["f1.W"][:] = 0.0
    params["f1.b"][:] = 0.0
    r = nn.forward(params, np.ones((2, 4)))
    assert np.array_equal(r.embedding, [[1.0, 0, 0, 0]] * 2)
    grads = nn.backward(params, r, d_embedding=np.ones((2, 4)))
    assert all(np.all(g == 0) for g in grads.values())


def test_zero_final_layer_gives_uniform(params):
    params["g1.W"][:] = 0.0
    params["g1.b"][:] = 0.0
    p = nn.forward(params, np.arange(4.0)).class_probs
    assert np.allclose(p, 1 / 3, atol=0, rtol=1e-15)


def test_forward_deterministic(params):
    x = np.random.default_rng(0).normal(size=(7, 4))
    a, b = nn.forward(params, x), nn.forward(params, x)
    assert np.array_equal(a.embedding, b.embedding)
    assert np.array_equal(a.class_probs, b.class_probs)


def test_forward_shape_error(params):
    with pytest.raises(ShapeMismatchError):
        nn.forward(params, np.ones(5))


def test_zero_upstream_gives_zero_grads(params):
    fwd = nn.forward(params, np.ones((3, 4)))
    grads = nn.backward(params, fwd, np.zeros((3, 4)), np.zeros((3, 3)))
    assert all(np.all(g == 0) for g in grads.values())


def test_l2_penalty_gradient_is_weight(params):
    _, grads = nn.l2_penalty(params)
    for name in params:
        assert np.array_equal(grads[name], params[name])


def test_nonfinite_upstream_raises(params):
    fwd = nn.forward(params, np.ones((2, 4)))
    with pytest.raises(NonFiniteLossError):
        nn.backward(params, fwd, d_probs=np.full((2, 3), np.nan))


@pytest.mark.parametrize("head", ["embedding", "probs", "both"])
def test_backward_matches_finite_differences(params, head):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 4))
    ce = rng.normal(size=(5, 4))
    cp = rng.normal(size=(5, 3))

    def loss():
        r = nn.forward(params, x)
        total = 0.0
        if head in ("embedding", "both"):
            total += float(np.sum(ce * r.embedding))
        if head in ("probs", "both"):
            total += float(np.sum(cp * np.log(r.class_probs)))
        return total

    r = nn.forward(params, x)
    de = ce if head in ("embedding", "both") else None
    dp = cp / r.class_probs if head in ("probs", "both") else None
    grads = nn.backward(params, r, de, dp)
    num = numeric_grad(loss, params)
    for name in params:
        assert rel_err(grads[name], num[name]) < 1e-4, name


def test_sgd_zero_lr_is_noop(params):
    before = {k: v.copy() for k, v in params.items()}
    grads = {k: np.ones_like(v) for k, v in params.items()}
    nn.sgd_step(params, grads, nn.OptimizerState(0.1), lr=0.0)
    assert all(np.array_equal(before[k], params[k]) for k in params)


def test_sgd_plain_step():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.25])}
    nn.sgd_step(p, g, nn.OptimizerState(1.0, momentum=0.0, weight_decay=0.0), lr=1.0)
    assert np.array_equal(p["w"], [0.5, -2.25])


def test_sgd_momentum_two_steps():
    # unrolled by hand: buffers g then 1.9 g, so displacement lr * g * (1 + 1.9)
    p = {"w": np.array([0.0])}
    g = {"w": np.array([2.0])}
    opt = nn.OptimizerState(0.1, momentum=0.9, weight_decay=0.0)
    nn.sgd_step(p, g, opt, lr=0.1)
    nn.sgd_step(p, g, opt, lr=0.1)
    assert p["w"][0] == pytest.approx(-0.1 * 2.0 * 2.9, abs=1e-15)


def test_sgd_weight_decay():
    p = {"w": np.array([10.0])}
    nn.sgd_step(p, {"w": np.array([0.0])}, nn.OptimizerState(1.0, momentum=0.0, weight_decay=0.1), lr=1.0)
    assert p["w"][0] == pytest.approx(9.0)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        nn.sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nn.OptimizerState(1.0), lr=1.0)


def test_lr_schedule_warmup_then_cosine():
    opt = nn.OptimizerState(0.03, warmup_epochs=20, total_epochs=200)
    assert nn.lr_schedule(20, opt) == 0.03
    assert nn.lr_schedule(10, opt) == pytest.approx(0.015, abs=1e-15)
    assert nn.lr_schedule(0, opt) == pytest.approx(0.03 / 20)
    warm = [nn.lr_schedule(e, opt) for e in range(1, 21)]
    assert all(a < b for a, b in zip(warm, warm[1:]))
    decay = [nn.lr_schedule(e, opt) for e in range(20, 200)]
    assert all(a >= b for a, b in zip(decay, decay[1:]))


def test_lr_schedule_cosine_endpoint():
    T = 50
    opt = nn.OptimizerState(0.1, warmup_epochs=0, total_epochs=T)
    assert nn.lr_schedule(0, opt) == 0.1
    last = nn.lr_schedule(T - 1, opt)
    assert last == pytest.approx(0.1 * 0.5 * (1 + math.cos(math.pi * (T - 1) / T)))
    assert last < 1e-3


@pytest.mark.parametrize("epoch", [-1, 10])
def test_lr_schedule_out_of_range(epoch):
    with pytest.raises(InvalidArgumentError):
        nn.lr_schedule(epoch, nn.OptimizerState(0.1, total_epochs=10))


def test_optimizer_state_validation():
    with pytest.raises(InvalidArgumentError):
        nn.OptimizerState(0.1, momentum=1.0)
    with pytest.raises(InvalidArgumentError):
        nn.OptimizerState(-0.1)


def test_checkpoint_roundtrip(tmp_path, params):
    nn.save_checkpoint(params, tmp_path / "ck.npz")
    back = nn.load_checkpoint(tmp_path / "ck.npz")
    assert set(back) == set(params)
    for k in params:
        assert back[k].dtype == params[k].dtype and np.array_equal(back[k], params[k])


def test_float32_params():
    p = nn.init_params(4, 3, rng=0, dtype=np.float32)
    r = nn.forward(p, np.ones(4))
    assert r.embedding.dtype == np.float32
    assert abs(np.linalg.norm(r.embedding) - 1) < 1e-6
