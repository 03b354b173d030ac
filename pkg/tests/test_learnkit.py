"""Layer math, gradient-check oracle, optimizer semantics, checkpoint bytes."""

import math

import numpy as np
import pytest

from earshot.errors import DataError
from earshot.learnkit import (
    AdamState,
    Dense,
    Norm,
    OptimConfig,
    ParameterSet,
    affine,
    affine_back,
    attention,
    attention_back,
    grad_check,
    layer_norm,
    layer_norm_back,
    load_checkpoint,
    lr_at,
    optim_step,
    save_checkpoint,
    softmax_ce,
    softmax_ce_back,
    tanh_back,
    tanh_f,
    xavier,
)


def test_affine_identity():
    x = np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32)
    y, _ = affine(x, np.eye(3, dtype=np.float32), np.zeros(3, dtype=np.float32))
    assert np.allclose(y, x)


def test_softmax_ce_uniform_is_log_k():
    for k in (4, 64):
        loss, _ = softmax_ce(np.zeros((5, k)), np.zeros(5, dtype=int))
        assert abs(loss - math.log(k)) < 1e-12


def test_softmax_ce_large_margin_is_tiny():
    logits = np.zeros((1, 4))
    logits[0, 2] = 20.0
    loss, _ = softmax_ce(logits, np.array([2]))
    assert loss <= 1e-8


def test_softmax_ce_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(6, 5))
    _, cache = softmax_ce(logits, np.arange(6) % 5)
    d = softmax_ce_back(cache)
    assert np.allclose(d.sum(axis=1), 0.0, atol=1e-12)


def test_attention_single_matching_key_returns_value():
    q = np.ones((1, 1, 8))
    v = np.arange(8, dtype=np.float64).reshape(1, 1, 8)
    out, _ = attention(q, q.copy(), v)
    assert np.allclose(out, v)


def test_grad_check_quadratic_is_exact():
    def fn(params):
        w = params["w"]
        return float(np.sum(w * w)), {"w": 2.0 * w}

    w0 = {"w": np.random.default_rng(2).normal(size=(5, 4)).astype(np.float32)}
    assert grad_check(fn, w0) < 1e-8


def test_grad_check_constant_loss_is_zero():
    def fn(params):
        return 3.5, {"w": np.zeros_like(params["w"])}

    assert grad_check(fn, {"w": np.ones((3, 3), dtype=np.float32)}) == 0.0


def test_grad_check_flags_a_wrong_gradient():
    def fn(params):
        w = params["w"]
        return float(np.sum(w * w)), {"w": 3.0 * w}  # deliberately wrong

    assert grad_check(fn, {"w": np.ones((2, 2), dtype=np.float32)}) > 1e-2


def mlp_loss_fn(x, target):
    """Two-layer tanh MLP with layer norm, attention mixer, and CE head."""

    def fn(params):
        ps = ParameterSet()
        for k, v in params.items():
            ps.add(k, v)
        h, c1 = affine(x.astype(params["w1"].dtype), ps.params["w1"], ps.params["b1"])
        a, ya = tanh_f(h)
        n, cn = layer_norm(a, ps.params["g"], ps.params["beta"])
        att, ca = attention(n[:, None, :], n[:, None, :], n[:, None, :])
        att = att[:, 0, :]
        logits, c2 = affine(att, ps.params["w2"], ps.params["b2"])
        loss, cce = softmax_ce(logits, target)
        dlog = softmax_ce_back(cce)
        datt, dw2, db2 = affine_back(dlog, c2)
        dq, dk, dv = attention_back(datt[:, None, :], ca)
        dn = (dq + dk + dv)[:, 0, :]
        da, dg, dbeta = layer_norm_back(dn, cn)
        dh = tanh_back(da, ya)
        _, dw1, db1 = affine_back(dh, c1)
        grads = {"w1": dw1, "b1": db1, "g": dg, "beta": dbeta, "w2": dw2, "b2": db2}
        return loss, grads

    return fn


def test_grad_check_mlp_under_1e4():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 5)).astype(np.float32)
    params = {
        "w1": xavier(rng, 5, 7),
        "b1": np.zeros(7, dtype=np.float32),
        "g": np.ones(7, dtype=np.float32),
        "beta": np.zeros(7, dtype=np.float32),
        "w2": xavier(rng, 7, 3),
        "b2": np.zeros(3, dtype=np.float32),
    }
    err = grad_check(mlp_loss_fn(x, np.array([0, 1, 2, 0, 1, 2])), params)
    assert err < 1e-4


def test_lr_schedule_endpoints():
    oc = OptimConfig(total_steps=10_000)
    assert lr_at(0, oc) == 0.0
    assert abs(lr_at(500, oc) - 1e-4) < 1e-12  # 5% of total = peak
    assert lr_at(10_000, oc) < 1e-12


def test_optim_zero_grads_only_decays():
    ps = ParameterSet()
    ps.add("w", np.full(4, 2.0, dtype=np.float32))
    state = AdamState.for_params(ps)
    oc = OptimConfig(total_steps=100, warmup_frac=0.0)
    lr = optim_step(ps, state, oc, step=0)
    expected = 2.0 * (1.0 - lr * oc.weight_decay)
    assert np.allclose(ps.params["w"], expected, atol=1e-7)


def test_optim_clips_global_norm_before_moments():
    ps = ParameterSet()
    ps.add("w", np.zeros(4, dtype=np.float32))
    ps.grads["w"] = np.array([10.0, 0.0, 0.0, 0.0], dtype=np.float32)  # norm 10
    state = AdamState.for_params(ps)
    optim_step(ps, state, OptimConfig(total_steps=100), step=0)
    # m = (1-beta1) * clipped_grad = 0.1 * [1, 0, 0, 0]
    assert np.allclose(state.m["w"], [0.1, 0.0, 0.0, 0.0], atol=1e-7)


def test_dense_norm_wrappers_accumulate():
    rng = np.random.default_rng(4)
    ps = ParameterSet()
    dense = Dense(ps, "d", 3, 2, rng)
    norm = Norm(ps, "n", 2)
    x = rng.normal(size=(5, 3)).astype(np.float32)
    y = norm(dense(x))
    dx = dense.backward(norm.backward(np.ones_like(y)))
    assert dx.shape == x.shape
    assert np.any(ps.grads["d.w"] != 0)
    assert np.any(ps.grads["n.g"] != 0)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    tensors = {
        "a.w": rng.normal(size=(3, 4)).astype(np.float32),
        "a.b": rng.normal(size=4).astype(np.float32),
        "scalar": np.float32(1.5).reshape(()),
    }
    header = {"kind": "test", "step": 7}
    p1 = tmp_path / "c1.ck"
    save_checkpoint(p1, tensors, header)
    back, h = load_checkpoint(p1)
    assert h == header
    for k, v in tensors.items():
        assert np.array_equal(back[k], np.asarray(v))
    p2 = tmp_path / "c2.ck"
    save_checkpoint(p2, back, h)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ck"
    p.write_bytes(b"NOTEARSHOT" + b"\x00" * 32)
    with pytest.raises(DataError):
        load_checkpoint(p)
