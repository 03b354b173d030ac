import math

import numpy as np
import pytest

from earshot.envisioner import (
    CTX_DIM,
    U_DIM,
    Z_DIM,
    Envisioner,
    EnvisionerDims,
    envelope_features,
    pooled_window_features,
    stage_loss,
)
from earshot.errors import ContractError
from earshot.learnkit import ParameterSet, grad_check

F_S = 16_000
L = 640

DIMS = EnvisionerDims(vision=3, audio=5, instruction=4, memory=6, qpos=3, n_stages=3)


def build(seed: int = 0):
    ps = ParameterSet()
    model = Envisioner(ps, np.random.default_rng(seed), DIMS)
    return model, ps


def rand_inputs(batch: int, seed: int):
    rng = np.random.default_rng(seed)
    return (
        rng.normal(size=(batch, DIMS.vision)),
        rng.normal(size=(batch, DIMS.audio)),
        rng.normal(size=(batch, DIMS.instruction)),
        rng.normal(size=(batch, DIMS.memory)),
        rng.normal(size=(batch, DIMS.qpos)),
    )


def test_pooled_window_features_shape_and_band_sensitivity():
    n = 20 * L
    t = np.arange(n) / F_S
    low = 0.4 * np.sin(2 * math.pi * 300.0 * t)
    high = 0.4 * np.sin(2 * math.pi * 3000.0 * t)
    fl = pooled_window_features(low, F_S, L)
    fh = pooled_window_features(high, F_S, L)
    assert fl.shape == (16,)
    assert float(np.max(np.abs(fl - fh))) > 0.05


def test_pooled_window_features_order_free():
    rng = np.random.default_rng(1)
    packets = rng.uniform(-0.5, 0.5, (8, L))
    a = pooled_window_features(packets.reshape(-1), F_S, L)
    b = pooled_window_features(packets[::-1].reshape(-1), F_S, L)
    assert np.allclose(a, b)


def test_pooled_window_features_rejects_short_window():
    with pytest.raises(ContractError):
        pooled_window_features(np.zeros(L - 1), F_S, L)


def test_envelope_features_frozen_example():
    # 512 ramp samples into 256 bins: each bin keeps the larger of its pair
    win = np.arange(512) / 512.0
    env = envelope_features(win, bins=256)
    assert env.shape == (256,)
    assert env[0] == 1.0 / 512.0
    assert env[255] == 511.0 / 512.0
    with pytest.raises(ContractError):
        envelope_features(np.zeros(100), bins=256)


def test_encode_shapes_and_determinism():
    model, _ = build()
    v, a, i, m, q = rand_inputs(4, seed=2)
    z, ctx, logits, u = model.encode(v, a, i, m, q)
    assert z.shape == (4, Z_DIM)
    assert ctx.shape == (4, CTX_DIM)
    assert logits.shape == (4, DIMS.n_stages)
    assert u.shape == (4, U_DIM)
    z2, ctx2, logits2, u2 = model.encode(v, a, i, m, q)
    assert np.array_equal(z, z2) and np.array_equal(u, u2)
    assert np.array_equal(ctx, ctx2) and np.array_equal(logits, logits2)


def test_untrained_stage_head_is_uniform():
    model, _ = build()
    v, a, i, m, q = rand_inputs(5, seed=3)
    _, _, logits, _ = model.encode(v, a, i, m, q)
    assert np.all(logits == 0.0)
    loss, _ = stage_loss(logits, np.array([0, 1, 2, 0, 1]), weight=1.0)
    assert math.isclose(loss, math.log(DIMS.n_stages), rel_tol=0, abs_tol=1e-12)


def test_memory_stream_reaches_latent():
    model, _ = build()
    v, a, i, m, q = rand_inputs(2, seed=4)
    z1, _, _, _ = model.encode(v, a, i, m, q)
    z2, _, _, _ = model.encode(v, a, i, m + 1.0, q)
    assert float(np.max(np.abs(z1 - z2))) > 0.0


def test_stage_loss_weight_scales_gradient_only():
    logits = np.random.default_rng(5).normal(size=(3, 4))
    labels = np.array([1, 3, 0])
    loss1, d1 = stage_loss(logits, labels, weight=1.0)
    loss2, d2 = stage_loss(logits, labels, weight=2.0)
    assert loss1 == loss2
    assert np.allclose(d2, 2.0 * d1)


def test_trunk_gradients_match_central_differences():
    model, ps = build(seed=6)
    rng = np.random.default_rng(7)
    ps.load({k: v + rng.normal(scale=0.05, size=v.shape).astype(v.dtype)
             for k, v in ps.params.items()})
    v, a, i, m0, q = rand_inputs(2, seed=8)
    labels = np.array([2, 0])
    r_z = rng.normal(size=(2, Z_DIM))
    r_ctx = rng.normal(size=(2, CTX_DIM))
    r_u = rng.normal(size=(2, U_DIM))
    w_stage = 0.7

    def fn(params):
        ps.load({k: val for k, val in params.items() if k != "mem"})
        z, ctx, logits, u = model.encode(v, a, i, params["mem"], q)
        sloss, dlogits = stage_loss(logits, labels, weight=w_stage)
        loss = w_stage * sloss + float(np.sum(r_z * z) + np.sum(r_ctx * ctx) + np.sum(r_u * u))
        model.backward(r_z, r_ctx, dlogits, r_u)
        grads = dict(ps.grads)
        grads["mem"] = model.memory_grad
        return loss, grads

    start = dict(ps.copy_values())
    start["mem"] = m0
    assert grad_check(fn, start, max_coords=140) < 1e-4
