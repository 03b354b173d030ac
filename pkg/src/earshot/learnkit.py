"""Minimal differentiable substrate: five layer kinds with hand-derived
backward passes, a clipped AdamW-style optimizer with warmup+cosine schedule,
central-difference gradient checking, and a bit-exact checkpoint format.

Parameters live as float32 row-major arrays. All layer math follows the dtype
of its inputs, so gradient checks can run the same code on float64 copies
(float32 central differences cannot resolve 1e-4 relative error).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DataError, NumericError

Array = np.ndarray


class ParameterSet:
    """Named parameter arrays with matching gradient accumulators.

    Names are dot-scoped by owning module (e.g. "field.block1.w").
    """

    def __init__(self) -> None:
        self.params: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}

    def add(self, name: str, value: Array) -> None:
        if name in self.params:
            raise ContractError(f"duplicate parameter {name!r}")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grads(self) -> None:
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def accumulate(self, name: str, g: Array) -> None:
        self.grads[name] = self.grads[name] + g

    def load(self, values: dict[str, Array]) -> None:
        """Replace parameter arrays (dtype preserved; used by grad checks and
        checkpoint restore)."""
        missing = set(self.params) - set(values)
        extra = set(values) - set(self.params)
        if missing or extra:
            raise ContractError(f"parameter name mismatch: missing={missing} extra={extra}")
        for name, v in values.items():
            if v.shape != self.params[name].shape:
                raise ContractError(f"shape mismatch for {name!r}")
            self.params[name] = v
        self.zero_grads()

    def copy_values(self) -> dict[str, Array]:
        return {k: v.copy() for k, v in self.params.items()}


def xavier(rng: np.random.Generator, din: int, dout: int) -> Array:
    bound = math.sqrt(6.0 / (din + dout))
    return rng.uniform(-bound, bound, (din, dout)).astype(np.float32)


# ---------------------------------------------------------------------------
# Functional layers: forward returns (out, cache); backward consumes cache.
# ---------------------------------------------------------------------------


def affine(x: Array, w: Array, b: Array) -> tuple[Array, tuple]:
    return x @ w + b, (x, w)


def affine_back(dy: Array, cache: tuple) -> tuple[Array, Array, Array]:
    x, w = cache
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, x2.T @ dy2, dy2.sum(axis=0)


def tanh_f(x: Array) -> tuple[Array, Array]:
    y = np.tanh(x)
    return y, y


def tanh_back(dy: Array, y: Array) -> Array:
    return dy * (1.0 - y * y)


def layer_norm(x: Array, gamma: Array, beta: Array, eps: float = 1e-5) -> tuple[Array, tuple]:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def layer_norm_back(dy: Array, cache: tuple) -> tuple[Array, Array, Array]:
    xhat, inv, gamma = cache
    d = xhat.shape[-1]
    dxhat = dy * gamma
    # Standard normalized-axis backward; keepdims sums stay broadcastable.
    dx = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) * inv
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def softmax_ce(logits: Array, labels: Array) -> tuple[float, tuple]:
    """Mean cross-entropy of integer labels under softmax(logits); rows = batch."""
    if logits.ndim != 2:
        raise ContractError("softmax_ce expects (batch, classes) logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(logits.shape[0])
    loss = float(-logp[rows, labels].mean())
    return loss, (np.exp(logp), labels)


def softmax_ce_back(cache: tuple, scale: float = 1.0) -> Array:
    probs, labels = cache
    d = probs.copy()
    d[np.arange(probs.shape[0]), labels] -= 1.0
    return d * (scale / probs.shape[0])


def attention(q: Array, k: Array, v: Array) -> tuple[Array, tuple]:
    """Single-head scaled dot-product attention over the last two axes.

    q: (..., Tq, D), k/v: (..., Tk, D); softmax over keys.
    """
    d = q.shape[-1]
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(d)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    return attn @ v, (q, k, v, attn)


def attention_back(dout: Array, cache: tuple) -> tuple[Array, Array, Array]:
    q, k, v, attn = cache
    d = q.shape[-1]
    dv = np.swapaxes(attn, -1, -2) @ dout
    dattn = dout @ np.swapaxes(v, -1, -2)
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = dscores @ k / math.sqrt(d)
    dk = np.swapaxes(dscores, -1, -2) @ q / math.sqrt(d)
    return dq, dk, dv


# Thin stateful wrappers for one-shot nets (single forward per backward).


class Dense:
    def __init__(
        self,
        ps: ParameterSet,
        name: str,
        din: int,
        dout: int,
        rng: np.random.Generator,
        zero_init: bool = False,
    ) -> None:
        self.ps, self.name = ps, name
        w = np.zeros((din, dout), dtype=np.float32) if zero_init else xavier(rng, din, dout)
        ps.add(name + ".w", w)
        ps.add(name + ".b", np.zeros(dout, dtype=np.float32))
        self._cache: tuple | None = None

    def __call__(self, x: Array) -> Array:
        y, cache = affine(x, self.ps.params[self.name + ".w"], self.ps.params[self.name + ".b"])
        self._cache = cache
        return y

    def backward(self, dy: Array) -> Array:
        dx, dw, db = affine_back(dy, self._cache)
        self.ps.accumulate(self.name + ".w", dw)
        self.ps.accumulate(self.name + ".b", db)
        return dx


class Norm:
    def __init__(self, ps: ParameterSet, name: str, dim: int) -> None:
        self.ps, self.name = ps, name
        ps.add(name + ".g", np.ones(dim, dtype=np.float32))
        ps.add(name + ".b", np.zeros(dim, dtype=np.float32))
        self._cache: tuple | None = None

    def __call__(self, x: Array) -> Array:
        y, cache = layer_norm(x, self.ps.params[self.name + ".g"], self.ps.params[self.name + ".b"])
        self._cache = cache
        return y

    def backward(self, dy: Array) -> Array:
        dx, dg, db = layer_norm_back(dy, self._cache)
        self.ps.accumulate(self.name + ".g", dg)
        self.ps.accumulate(self.name + ".b", db)
        return dx


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    fn: Callable[[dict[str, Array]], tuple[float, dict[str, Array]]],
    params: dict[str, Array],
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between fn's analytic gradients and central
    differences, over all coordinates or a >=max_coords random subsample.

    fn(params) -> (scalar loss, grads keyed like params). Evaluated on float64
    copies of the parameters.
    """
    base = {k: np.asarray(v, dtype=np.float64).copy() for k, v in params.items()}
    _, grads = fn(base)
    coords = [(name, idx) for name, p in base.items() for idx in range(p.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in pick]
    worst = 0.0
    for name, idx in coords:
        flat = base[name].reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + eps
        up, _ = fn(base)
        flat[idx] = keep - eps
        down, _ = fn(base)
        flat[idx] = keep
        numeric = (up - down) / (2.0 * eps)
        analytic = float(grads[name].reshape(-1)[idx])
        rel = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-8)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimConfig:
    peak_lr: float = 1e-4
    weight_decay: float = 0.05
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.05
    total_steps: int = 10_000


@dataclass
class AdamState:
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def for_params(cls, ps: ParameterSet) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in ps.params.items()},
            v={k: np.zeros_like(p) for k, p in ps.params.items()},
        )


def lr_at(step: int, oc: OptimConfig) -> float:
    """Linear 0 -> peak over the first warmup_frac of steps, then cosine to 0."""
    warm = max(1, round(oc.warmup_frac * oc.total_steps))
    if step < warm:
        return oc.peak_lr * step / warm
    span = max(1, oc.total_steps - warm)
    frac = min(1.0, (step - warm) / span)
    return oc.peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def global_grad_norm(ps: ParameterSet) -> float:
    total = 0.0
    for g in ps.grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return math.sqrt(total)


def optim_step(ps: ParameterSet, state: AdamState, oc: OptimConfig, step: int) -> float:
    """One update: clip global grad norm, decoupled weight decay, Adam moments.

    Returns the learning rate used. Non-finite gradients raise NumericError.
    """
    norm = global_grad_norm(ps)
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    scale = np.float32(oc.clip_norm / norm) if norm > oc.clip_norm else np.float32(1.0)
    lr = lr_at(step, oc)
    t = step + 1
    bc1 = 1.0 - oc.beta1**t
    bc2 = 1.0 - oc.beta2**t
    for name, p in ps.params.items():
        g = ps.grads[name] * scale
        state.m[name] = oc.beta1 * state.m[name] + (1.0 - oc.beta1) * g
        state.v[name] = oc.beta2 * state.v[name] + (1.0 - oc.beta2) * g * g
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        p = p - lr * oc.weight_decay * p  # decoupled decay on parameters
        ps.params[name] = (p - lr * mhat / (np.sqrt(vhat) + oc.eps)).astype(p.dtype)
    return lr


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"EARSHOT\x01"


def save_checkpoint(path, tensors: dict[str, Array], header: dict) -> None:
    """Binary layout: magic, u32 header length, canonical JSON header,
    u32 tensor count, then per tensor: u32 name len, name, u32 ndim,
    u32 dims..., raw little-endian float32 row-major data."""
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(head)), head, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> tuple[dict[str, Array], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"bad checkpoint magic in {path}")
    off = len(MAGIC)

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    (hlen,) = take("<I")
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    (count,) = take("<I")
    tensors: dict[str, Array] = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        tensors[name] = arr.copy()
    if off != len(raw):
        raise DataError("trailing bytes in checkpoint")
    return tensors, header
