import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from perpgrad.errors import ConfigurationError
from perpgrad.netcore import (
    LayerSpec,
    Network,
    PredictionBatch,
    homogeneity_check,
    load_weights,
    mlp_specs,
    save_weights,
    scale_group,
    softmax,
)


def test_identity_layer_forward():
    net = Network(mlp_specs([2, 2]), {"fc0.weight": np.eye(2)})
    np.testing.assert_array_equal(net.forward([[1.0, 2.0]]).logits, [[1.0, 2.0]])


def test_zero_weights_give_uniform_probs():
    net = Network.mlp([4, 6, 5])
    out = net.forward(np.random.default_rng(0).standard_normal((7, 4)))
    assert np.all(out.logits == 0)
    np.testing.assert_allclose(out.probs, 1 / 5, rtol=0, atol=1e-15)


@pytest.mark.parametrize("has_bias", [False, True])
def test_forward_matches_scalar_oracle(has_bias):
    rng = np.random.default_rng(7)
    net = Network.mlp([4, 6, 3], has_bias=has_bias, rng=rng)
    if has_bias:
        for k in net.params:
            if k.endswith("bias"):
                net.params[k] = rng.standard_normal(net.params[k].shape)
    X = rng.standard_normal((10, 4))
    Ws = [net.params["fc0.weight"].tolist(), net.params["fc1.weight"].tolist()]
    bs = [net.params["fc0.bias"].tolist(), net.params["fc1.bias"].tolist()] if has_bias else None
    got = net.logits(X)
    for i, x in enumerate(X):
        np.testing.assert_allclose(got[i], oracles.matmul_forward(Ws, bs, x), rtol=0, atol=1e-12)


def test_dimension_mismatch_is_configuration_error(small_net):
    with pytest.raises(ConfigurationError):
        small_net.forward(np.zeros((2, 4)))
    with pytest.raises(ConfigurationError):
        Network([LayerSpec("linear", 2, 3), LayerSpec("linear", 4, 2)])


def test_uniform_logits_loss_is_ln2():
    net = Network.mlp([2, 2])
    loss, _ = net.loss_and_grad([[0.3, -1.0]], [0])
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_saturated_softmax_loss():
    net = Network(mlp_specs([3, 3]), {"fc0.weight": 100 * np.eye(3)})
    loss, _ = net.loss_and_grad(np.eye(3), [0, 1, 2])
    assert loss < 1e-10


def test_empty_batch_rejected(small_net):
    with pytest.raises(ValueError):
        small_net.loss_and_grad(np.zeros((0, 3)), [])


def _finite_difference_check(net, X, y, h=1e-5):
    _, groups = net.loss_and_grad(X, y)
    checked = 0
    for g in groups:
        base = net.params[g.group_id]
        for idx in range(base.size):
            orig = base.flat[idx]
            base.flat[idx] = orig + h
            up = net.loss(X, y)
            base.flat[idx] = orig - h
            down = net.loss(X, y)
            base.flat[idx] = orig
            fd = (up - down) / (2 * h)
            an = g.grad[idx]
            if abs(an) > 1e-8:
                assert abs(fd - an) <= 1e-6 * abs(an), (g.group_id, idx, fd, an)
                checked += 1
    return checked


@pytest.mark.parametrize("has_bias", [False, True])
def test_gradients_match_central_differences(has_bias):
    rng = np.random.default_rng(3)
    net = Network.mlp([4, 10, 8, 3], has_bias=has_bias, rng=rng)
    if has_bias:
        for k in net.params:
            if k.endswith("bias"):
                net.params[k] = 0.1 * rng.standard_normal(net.params[k].shape)
    X = rng.standard_normal((12, 4))
    y = rng.integers(0, 3, 12)
    assert _finite_difference_check(net, X, y) >= 100


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=12))
def test_softmax_rows_sum_to_one(row):
    p = softmax(np.array([row]))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all((p >= 0) & (p <= 1))


def test_scale_group_identity_is_bitwise(small_net):
    same = scale_group(small_net, "fc0.weight", 1.0)
    for k in small_net.params:
        assert small_net.params[k].tobytes() == same.params[k].tobytes()


def test_scale_group_rejects_nonpositive(small_net):
    for c in (0.0, -1.0):
        with pytest.raises(ValueError):
            scale_group(small_net, "fc0.weight", c)


def test_scale_first_layer_scales_logits(small_net, rng):
    X = rng.standard_normal((50, 3))
    z = small_net.logits(X)
    z3 = scale_group(small_net, "fc0.weight", 3.0).logits(X)
    np.testing.assert_allclose(z3, 3 * z, rtol=1e-9, atol=0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.sampled_from(["fc0.weight", "fc1.weight", "fc2.weight"]), st.integers(0, 2**31))
def test_argmax_invariant_under_positive_scaling(c, gid, seed):
    r = np.random.default_rng(seed)
    net = Network.mlp([3, 6, 6, 4], rng=r)
    X = r.standard_normal((40, 3))
    before = np.argmax(net.logits(X), axis=1)
    after = np.argmax(scale_group(net, gid, c).logits(X), axis=1)
    np.testing.assert_array_equal(before, after)


def test_homogeneity_check_bias_free_passes(small_net, rng):
    X = rng.standard_normal((30, 3))
    rep = homogeneity_check(small_net, X, [0.5, 2.0, 7.0])
    assert rep.passed
    for gid in small_net.group_ids:
        assert rep.alpha(gid, 2.0) == pytest.approx(2.0, rel=1e-12)


def test_homogeneity_check_unit_scale():
    net = Network.mlp([3, 4, 2], rng=np.random.default_rng(1))
    rep = homogeneity_check(net, np.ones((3, 3)), [1.0])
    assert rep.passed and all(e.alpha == pytest.approx(1.0, abs=1e-15) for e in rep.entries)


def test_homogeneity_check_with_biases_fails(rng):
    net = Network.mlp([3, 5, 4], has_bias=True, rng=rng)
    for k in net.params:
        if k.endswith("bias"):
            net.params[k] = rng.standard_normal(net.params[k].shape)
    rep = homogeneity_check(net, rng.standard_normal((30, 3)), [2.0])
    assert not rep.passed
    assert rep.max_residual > 1e-3


def test_forward_is_deterministic(small_net, rng):
    X = rng.standard_normal((20, 3))
    assert small_net.logits(X).tobytes() == small_net.logits(X).tobytes()


def test_weights_roundtrip(tmp_path, rng):
    net = Network.mlp([3, 7, 2], has_bias=True, rng=rng)
    path = tmp_path / "w.ogw"
    save_weights(net, path)
    raw = path.read_bytes()
    assert raw[:4] == b"OGW1"
    back = load_weights(path)
    assert back.specs == net.specs
    for k in net.params:
        assert back.params[k].tobytes() == net.params[k].tobytes()


def test_weights_bad_magic(tmp_path):
    p = tmp_path / "bad.ogw"
    p.write_bytes(b"XXXX" + b"\0" * 8)
    with pytest.raises(ConfigurationError):
        load_weights(p)


def test_prediction_batch_validation():
    with pytest.raises(ValueError):
        PredictionBatch.from_logits([[0.0, 1.0]], [2])
