"""Streaming causal audio memory: a fixed packet-level feature frontend and
three fold variants (attention slots, gated recurrence, exponential average).

The frontend is pure DSP with no trainable parameters; folds consume packets
one at a time, so any partition of a packet stream into update calls produces
a bit-identical final state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .learnkit import ParameterSet, attention, attention_back, xavier

Array = np.ndarray

DB_FLOOR = -80.0
ONSET_JUMP_DB = 10.0
BAND_EDGES_HZ = (0.0, 500.0, 1500.0, 4000.0, 8000.0)
FEATURE_DIM = 8  # rms_db, band_db x4, zcr, centroid, onset


def frontend(packets: Array, f_s: int, prev_db: float = DB_FLOOR) -> Array:
    """Per-packet features from exactly L samples each: log-RMS dB (floored at
    -80), four band log energies via magnitude DFT, zero-crossing rate,
    normalized spectral centroid, and an onset flag (rms jump > 10 dB over the
    previous packet; prev_db seeds the chain).

    packets: (P, L) or (L,). Returns float64 (P, 8).
    """
    x = np.asarray(packets, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] < 2:
        raise ContractError("frontend expects (P, L) packets with L >= 2")
    p_count, length = x.shape

    power = np.mean(x * x, axis=1)
    rms_db = np.maximum(10.0 * np.log10(power + 1e-30), DB_FLOOR)

    spec = np.fft.rfft(x, axis=1)
    mag2 = (spec.real**2 + spec.imag**2)
    # Parseval weighting: mean(x^2) == sum_k w_k |X_k|^2 for real signals.
    w = np.full(mag2.shape[1], 2.0 / (length * length))
    w[0] = 1.0 / (length * length)
    if length % 2 == 0:
        w[-1] = 1.0 / (length * length)
    freqs = np.fft.rfftfreq(length, 1.0 / f_s)
    band_idx = np.clip(np.searchsorted(BAND_EDGES_HZ[1:-1], freqs, side="right"), 0, 3)
    weighted = mag2 * w
    band_power = np.zeros((p_count, 4))
    for b in range(4):
        band_power[:, b] = weighted[:, band_idx == b].sum(axis=1)
    band_db = np.maximum(10.0 * np.log10(band_power + 1e-30), DB_FLOOR)

    zcr = np.mean(x[:, 1:] * x[:, :-1] < 0.0, axis=1)
    mag = np.sqrt(mag2)
    centroid = (mag * freqs).sum(axis=1) / (mag.sum(axis=1) + 1e-12) / (f_s / 2.0)

    prev = np.concatenate([[prev_db], rms_db[:-1]])
    onset = (rms_db - prev > ONSET_JUMP_DB).astype(np.float64)

    return np.column_stack([rms_db, band_db, zcr, centroid, onset])


def normalize_features(feats: Array) -> Array:
    """Map raw features into [0, 1]: dB columns via (x+80)/80, rest as-is."""
    out = np.array(feats, dtype=np.float64, copy=True)
    out[..., :5] = (out[..., :5] - DB_FLOOR) / (-DB_FLOOR)
    return out


@dataclass(frozen=True)
class HistorizerConfig:
    variant: str = "sst_lite"  # sst_lite | gru | ema
    slots: int = 16
    slot_dim: int = 32
    gru_dim: int = 64
    alpha: float = 0.97

    def state_shape(self) -> tuple[int, ...]:
        if self.variant == "sst_lite":
            return (self.slots, self.slot_dim)
        if self.variant == "gru":
            return (self.gru_dim,)
        if self.variant == "ema":
            return (FEATURE_DIM,)
        raise ContractError(f"unknown historizer variant {self.variant!r}")

    @property
    def readout_dim(self) -> int:
        return int(np.prod(self.state_shape()))


def ema_step(h: Array, f: Array, alpha: float) -> Array:
    return alpha * h + (1.0 - alpha) * f


class Historizer:
    """Left fold over packet features; zero initial state.

    update() is the inference path (raw features in, new state out); fold()
    retains caches so fold_back() can push gradients through every step.
    """

    def __init__(self, cfg: HistorizerConfig, ps: ParameterSet, rng: np.random.Generator,
                 prefix: str = "historizer") -> None:
        self.cfg = cfg
        self.ps = ps
        self.prefix = prefix
        d = cfg.slot_dim
        if cfg.variant == "sst_lite":
            ps.add(f"{prefix}.wf", xavier(rng, FEATURE_DIM, d))
            ps.add(f"{prefix}.bf", np.zeros(d, dtype=np.float32))
            for gate in ("wq", "wk", "wv", "wo"):
                ps.add(f"{prefix}.{gate}", xavier(rng, d, d))
            ps.add(f"{prefix}.bo", np.zeros(d, dtype=np.float32))
        elif cfg.variant == "gru":
            g = cfg.gru_dim
            for gate in ("r", "z", "c"):
                ps.add(f"{prefix}.w{gate}", xavier(rng, FEATURE_DIM, g))
                ps.add(f"{prefix}.u{gate}", xavier(rng, g, g))
                ps.add(f"{prefix}.b{gate}", np.zeros(g, dtype=np.float32))
        elif cfg.variant != "ema":
            raise ContractError(f"unknown historizer variant {cfg.variant!r}")

    def _p(self, name: str) -> Array:
        return self.ps.params[f"{self.prefix}.{name}"]

    def _acc(self, name: str, g: Array) -> None:
        self.ps.accumulate(f"{self.prefix}.{name}", g)

    def zero_state(self, batch: int | None = None) -> Array:
        shape = self.cfg.state_shape()
        if batch is not None:
            shape = (batch,) + shape
        return np.zeros(shape, dtype=np.float32)

    # -- per-packet cells (batched: h (B, ...), f (B, 8) normalized) ---------

    def _cell(self, h: Array, f: Array) -> tuple[Array, tuple]:
        if self.cfg.variant == "sst_lite":
            token = f @ self._p("wf") + self._p("bf")
            kv = np.concatenate([h, token[:, None, :]], axis=1)
            q = h @ self._p("wq")
            k = kv @ self._p("wk")
            v = kv @ self._p("wv")
            att, att_cache = attention(q, k, v)
            out = np.tanh(h + att @ self._p("wo") + self._p("bo"))
            return out, ("sst", f, h, kv, att, att_cache, out)
        if self.cfg.variant == "gru":
            r = _sigmoid(f @ self._p("wr") + h @ self._p("ur") + self._p("br"))
            u = _sigmoid(f @ self._p("wz") + h @ self._p("uz") + self._p("bz"))
            rh = r * h
            c = np.tanh(f @ self._p("wc") + rh @ self._p("uc") + self._p("bc"))
            out = np.tanh((1.0 - u) * h + u * c)
            return out, ("gru", f, h, r, u, rh, c, out)
        out = ema_step(h, f, self.cfg.alpha)
        return out, ("ema",)

    def _cell_back(self, dh_next: Array, cache: tuple) -> Array:
        if cache[0] == "sst":
            _, f, h, kv, att, att_cache, out = cache
            dpre = dh_next * (1.0 - out * out)
            dh = dpre.copy()
            datt = dpre @ self._p("wo").T
            self._acc("wo", _mat_grad(att, dpre))
            self._acc("bo", _bias_grad(dpre))
            dq, dk, dv = attention_back(datt, att_cache)
            dkv = dk @ self._p("wk").T + dv @ self._p("wv").T
            self._acc("wk", _mat_grad(kv, dk))
            self._acc("wv", _mat_grad(kv, dv))
            dh += dq @ self._p("wq").T
            self._acc("wq", _mat_grad(h, dq))
            n_slots = h.shape[1]
            dh += dkv[:, :n_slots, :]
            dtoken = dkv[:, n_slots, :]
            self._acc("wf", f.T @ dtoken)
            self._acc("bf", dtoken.sum(axis=0))
            return dh
        if cache[0] == "gru":
            _, f, h, r, u, rh, c, out = cache
            dg = dh_next * (1.0 - out * out)
            du = dg * (c - h)
            dc = dg * u
            dh = dg * (1.0 - u)
            dc_pre = dc * (1.0 - c * c)
            self._acc("wc", f.T @ dc_pre)
            self._acc("uc", rh.T @ dc_pre)
            self._acc("bc", dc_pre.sum(axis=0))
            drh = dc_pre @ self._p("uc").T
            dh += drh * r
            dr = drh * h
            du_pre = du * u * (1.0 - u)
            self._acc("wz", f.T @ du_pre)
            self._acc("uz", h.T @ du_pre)
            self._acc("bz", du_pre.sum(axis=0))
            dh += du_pre @ self._p("uz").T
            dr_pre = dr * r * (1.0 - r)
            self._acc("wr", f.T @ dr_pre)
            self._acc("ur", h.T @ dr_pre)
            self._acc("br", dr_pre.sum(axis=0))
            dh += dr_pre @ self._p("ur").T
            return dh
        return dh_next * self.cfg.alpha

    # -- public fold API ------------------------------------------------------

    def update(self, h: Array, features: Array) -> Array:
        """Fold raw packet features (J, 8) into state h; inference path."""
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[None, :]
        hb = h[None, ...].astype(np.float32)
        for j in range(feats.shape[0]):
            fn = normalize_features(feats[j])[None, :].astype(np.float32)
            hb, _ = self._cell(hb, fn)
            hb = hb.astype(np.float32)
        return hb[0]

    def fold(self, h0: Array, features: Array) -> tuple[Array, list]:
        """Batched training fold. h0 (B, ...), features raw (B, J, 8)."""
        feats = normalize_features(np.asarray(features, dtype=np.float64))
        dtype = h0.dtype
        h = h0
        caches = []
        for j in range(feats.shape[1]):
            h, cache = self._cell(h, feats[:, j, :].astype(dtype))
            h = h.astype(dtype)
            caches.append(cache)
        return h, caches

    def fold_back(self, dh: Array, caches: list) -> Array:
        for cache in reversed(caches):
            dh = self._cell_back(dh, cache)
        return dh

    def readout(self, h: Array) -> Array:
        """Flatten state to the fusion vector (512 / 64 / 8 dims)."""
        return h.reshape(h.shape[:-2] + (-1,)) if self.cfg.variant == "sst_lite" else h


def _sigmoid(x: Array) -> Array:
    return 1.0 / (1.0 + np.exp(-x))


def _mat_grad(x: Array, dy: Array) -> Array:
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _bias_grad(dy: Array) -> Array:
    return dy.reshape(-1, dy.shape[-1]).sum(axis=0)
