import math

import numpy as np
import pytest

from earshot.errors import ContractError
from earshot.learnkit import ParameterSet, grad_check
from earshot.realizer import ChunkNorm, FlowField, RegressionHead, cfm_loss, sample

DIM = 6
U = 5


class StubField:
    def __init__(self, dim, fn):
        self.dim = dim
        self.fn = fn

    def forward(self, x, lam, u):
        return self.fn(x, lam, u)


class ZeroDraws:
    def standard_normal(self, shape):
        return np.zeros(shape)


def build(seed: int = 0):
    ps = ParameterSet()
    field = FlowField(ps, np.random.default_rng(seed), dim=DIM, u_dim=U, width=16)
    return field, ps


def test_chunk_norm_round_trip_and_floor():
    rng = np.random.default_rng(0)
    chunks = rng.normal(size=(50, 4)) * np.array([3.0, 0.1, 1.0, 0.0]) + 2.0
    norm = ChunkNorm.fit(chunks)
    assert norm.std[3] == np.float32(1e-6)  # constant column hits the floor
    z = norm.normalize(chunks)
    assert np.all(np.isfinite(z))
    assert np.allclose(norm.denormalize(z), chunks, atol=1e-5)
    with pytest.raises(ContractError):
        ChunkNorm.fit(np.zeros(7))


def test_film_is_identity_at_init():
    field, _ = build()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, DIM))
    lam = rng.uniform(0, 1, (3, 1))
    v_a = field.forward(x, lam, rng.normal(size=(3, U)))
    v_b = field.forward(x, lam, rng.normal(size=(3, U)))
    # zero-initialized FiLM output: modulation cannot depend on u yet
    assert np.array_equal(v_a, v_b)


def test_cfm_loss_zero_for_oracle_field():
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(8, DIM))
    x1 = rng.normal(size=(8, DIM))
    oracle = StubField(DIM, lambda x, lam, u: x1 - x0)
    loss, _ = cfm_loss(oracle, np.zeros((8, U)), x1, rng, x0=x0,
                       lam=rng.uniform(0, 1, (8, 1)), with_grad=False)
    assert loss == 0.0


def test_cfm_loss_expectation_for_null_field():
    # v = 0, d = 2, x1 = (1, 1): E||x1 - x0||^2 = 2 * (1 + 1) = 4
    rng = np.random.default_rng(3)
    n = 100_000
    null = StubField(2, lambda x, lam, u: np.zeros_like(x))
    x1 = np.ones((n, 2))
    loss, _ = cfm_loss(null, np.zeros((n, 1)), x1, rng, with_grad=False)
    assert abs(loss - 4.0) < 0.2


def test_sampler_integrates_constant_field_exactly():
    const = StubField(DIM, lambda x, lam, u: np.full_like(x, 2.5))
    x = sample(const, np.zeros((3, U)), ZeroDraws())
    # 8 steps of length 1/8 each moving 2.5: all dyadic, no rounding
    assert np.all(x == 2.5)
    with pytest.raises(ContractError):
        sample(const, np.zeros((1, U)), ZeroDraws(), steps=0)


def test_sample_deterministic_under_seed():
    field, _ = build(seed=4)
    u = np.random.default_rng(5).normal(size=(2, U)).astype(np.float32)
    a = sample(field, u, np.random.default_rng(9))
    b = sample(field, u, np.random.default_rng(9))
    assert np.array_equal(a, b)
    assert a.shape == (2, DIM)


def test_field_gradients_match_central_differences():
    field, ps = build(seed=6)
    rng = np.random.default_rng(7)
    ps.load({k: v + rng.normal(scale=0.05, size=v.shape).astype(v.dtype)
             for k, v in ps.params.items()})
    x0 = rng.normal(size=(2, DIM))
    x1 = rng.normal(size=(2, DIM))
    lam = rng.uniform(0.1, 0.9, (2, 1))
    u0 = rng.normal(size=(2, U))

    def fn(params):
        ps.load({k: val for k, val in params.items() if k != "u_in"})
        loss, du = cfm_loss(field, params["u_in"], x1, None, x0=x0, lam=lam)
        grads = dict(ps.grads)
        grads["u_in"] = du
        return loss, grads

    start = dict(ps.copy_values())
    start["u_in"] = u0
    assert grad_check(fn, start, max_coords=140) < 1e-4


def test_regression_head_zero_at_init_and_gradients():
    ps = ParameterSet()
    head = RegressionHead(ps, np.random.default_rng(8), dim=DIM, u_dim=U, width=12)
    rng = np.random.default_rng(9)
    u0 = rng.normal(size=(3, U))
    assert np.all(head.predict(u0) == 0.0)

    ps.load({k: v + rng.normal(scale=0.05, size=v.shape).astype(v.dtype)
             for k, v in ps.params.items()})
    x1 = rng.normal(size=(3, DIM))

    def fn(params):
        ps.load({k: val for k, val in params.items() if k != "u_in"})
        loss, du = head.loss(params["u_in"], x1)
        grads = dict(ps.grads)
        grads["u_in"] = du
        return loss, grads

    start = dict(ps.copy_values())
    start["u_in"] = u0
    assert grad_check(fn, start, max_coords=120) < 1e-4
