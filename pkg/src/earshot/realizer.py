"""Action-chunk generation: conditional flow matching over flattened,
per-dimension standardized chunks. The velocity field is a tanh MLP over
[x_lambda | lambda] whose two hidden blocks are FiLM-modulated by the control
embedding; sampling integrates 8 fixed Euler steps. A plain L2 regression
head provides the mode-averaging ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .learnkit import Dense, Norm, ParameterSet, tanh_back, tanh_f

Array = np.ndarray

N_EULER_STEPS = 8


@dataclass(frozen=True)
class ChunkNorm:
    """Per-dimension standardization fitted on expert chunks."""

    mean: Array
    std: Array

    @classmethod
    def fit(cls, chunks: Array) -> "ChunkNorm":
        if chunks.ndim != 2:
            raise ContractError("fit expects (N, D) flattened chunks")
        mean = chunks.mean(axis=0).astype(np.float32)
        std = np.maximum(chunks.std(axis=0), 1e-6).astype(np.float32)
        return cls(mean=mean, std=std)

    def normalize(self, x: Array) -> Array:
        return (x - self.mean) / self.std

    def denormalize(self, x: Array) -> Array:
        return x * self.std + self.mean


class FlowField:
    """v(x_lambda, lambda, u): affine -> [LN -> FiLM -> tanh] x2 -> affine.

    FiLM parameters come from a small tanh net on u with a zero-initialized
    output layer, so scale = shift = 0 (identity modulation) at init.
    """

    def __init__(self, ps: ParameterSet, rng: np.random.Generator, dim: int, u_dim: int,
                 width: int = 128, prefix: str = "field") -> None:
        self.dim = dim
        self.width = width
        self.in1 = Dense(ps, f"{prefix}.in1", dim + 1, width, rng)
        self.norm1 = Norm(ps, f"{prefix}.norm1", width)
        self.mid = Dense(ps, f"{prefix}.mid", width, width, rng)
        self.norm2 = Norm(ps, f"{prefix}.norm2", width)
        self.out = Dense(ps, f"{prefix}.out", width, dim, rng, zero_init=True)
        self.film1 = Dense(ps, f"{prefix}.film1", u_dim, 64, rng)
        self.film2 = Dense(ps, f"{prefix}.film2", 64, 4 * width, rng, zero_init=True)
        self._cache: dict = {}

    def _film_params(self, u: Array) -> tuple[Array, ...]:
        fh, self._cache["film_tanh"] = tanh_f(self.film1(u))
        raw = self.film2(fh)
        w = self.width
        return raw[..., :w], raw[..., w : 2 * w], raw[..., 2 * w : 3 * w], raw[..., 3 * w :]

    def forward(self, x: Array, lam: Array, u: Array) -> Array:
        """x (B, dim), lam (B, 1), u (B, u_dim) -> velocity (B, dim)."""
        s1, t1, s2, t2 = self._film_params(u)
        c = self._cache
        n1 = self.norm1(self.in1(np.concatenate([x, lam], axis=-1)))
        f1 = (1.0 + s1) * n1 + t1
        a1, c["t1"] = tanh_f(f1)
        n2 = self.norm2(self.mid(a1))
        f2 = (1.0 + s2) * n2 + t2
        a2, c["t2"] = tanh_f(f2)
        c["n1"], c["s1"], c["n2"], c["s2"] = n1, s1, n2, s2
        return self.out(a2)

    def backward(self, dv: Array) -> Array:
        """Accumulate parameter grads; returns du (for the control pathway)."""
        c = self._cache
        da2 = tanh_back(self.out.backward(dv), c["t2"])
        ds2 = da2 * c["n2"]
        dt2 = da2
        dn2 = da2 * (1.0 + c["s2"])
        da1 = tanh_back(self.mid.backward(self.norm2.backward(dn2)), c["t1"])
        ds1 = da1 * c["n1"]
        dt1 = da1
        dn1 = da1 * (1.0 + c["s1"])
        dxin = self.in1.backward(self.norm1.backward(dn1))
        dfilm = np.concatenate([ds1, dt1, ds2, dt2], axis=-1)
        dfh = tanh_back(self.film2.backward(dfilm), c["film_tanh"])
        du = self.film1.backward(dfh)
        self._dx = dxin[..., : self.dim]
        return du


def cfm_loss(
    field,
    u: Array,
    x1: Array,
    rng: np.random.Generator,
    x0: Array | None = None,
    lam: Array | None = None,
    with_grad: bool = True,
) -> tuple[float, Array | None]:
    """Flow-matching objective: draw x0 ~ N(0, I) and lambda ~ U(0, 1) (one
    draw per datum), form the straight-line point, and regress the field onto
    the constant path velocity (x1 - x0). Loss is the squared L2 norm summed
    over dims, averaged over the batch. Returns (loss, du)."""
    b, d = x1.shape
    if x0 is None:
        x0 = rng.standard_normal((b, d))
    if lam is None:
        lam = rng.uniform(0.0, 1.0, (b, 1))
    x0 = x0.astype(x1.dtype)
    lam = lam.astype(x1.dtype)
    x_lam = (1.0 - lam) * x0 + lam * x1
    target = x1 - x0
    v = field.forward(x_lam, lam, u)
    diff = v - target
    loss = float(np.mean(np.sum(diff * diff, axis=-1)))
    if not with_grad:
        return loss, None
    du = field.backward(2.0 * diff / b)
    return loss, du


def sample(field, u: Array, rng: np.random.Generator, steps: int = N_EULER_STEPS) -> Array:
    """Integrate dx/dlambda = v from x0 ~ N(0, I) with `steps` fixed Euler
    steps (lambda_i = i/steps). Output is in normalized chunk space."""
    if steps < 1:
        raise ContractError("need at least one Euler step")
    b = u.shape[0]
    x = rng.standard_normal((b, field.dim)).astype(np.float32)
    h = 1.0 / steps
    for i in range(steps):
        lam = np.full((b, 1), i * h, dtype=np.float32)
        x = x + h * field.forward(x, lam, u)
    return x


class RegressionHead:
    """Deterministic chunk regression from u; the mode-averaging ablation."""

    def __init__(self, ps: ParameterSet, rng: np.random.Generator, dim: int, u_dim: int,
                 width: int = 128, prefix: str = "regress") -> None:
        self.dim = dim
        self.l1 = Dense(ps, f"{prefix}.l1", u_dim, width, rng)
        self.l2 = Dense(ps, f"{prefix}.l2", width, width, rng)
        self.l3 = Dense(ps, f"{prefix}.l3", width, dim, rng, zero_init=True)
        self._c: dict = {}

    def predict(self, u: Array) -> Array:
        a1, self._c["t1"] = tanh_f(self.l1(u))
        a2, self._c["t2"] = tanh_f(self.l2(a1))
        return self.l3(a2)

    def loss(self, u: Array, x1: Array) -> tuple[float, Array]:
        """Mean squared-L2 loss; returns (loss, du)."""
        pred = self.predict(u)
        diff = pred - x1
        loss = float(np.mean(np.sum(diff * diff, axis=-1)))
        da2 = tanh_back(self.l3.backward(2.0 * diff / x1.shape[0]), self._c["t2"])
        da1 = tanh_back(self.l2.backward(da2), self._c["t1"])
        return loss, self.l1.backward(da1)
