"""Fusion encoder: per-stream affine+tanh encoders concatenated into a 128-d
context (vision | audio | instruction | memory), a 64-d latent MLP on top,
a per-task stage classifier, and a low-level control embedding conditioned on
the context and proprioception.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .historizer import frontend, normalize_features
from .learnkit import Dense, ParameterSet, softmax_ce, softmax_ce_back, tanh_back, tanh_f

Array = np.ndarray

STREAM_DIM = 32
CTX_DIM = 4 * STREAM_DIM  # vision | audio | instruction | memory
Z_DIM = 64
U_DIM = 32


def pooled_window_features(audio_window: Array, f_s: int, packet_len: int) -> Array:
    """Frame the query window into packet-length frames, run the fixed packet
    frontend, then mean+max pool over frames: a 16-d order-free summary."""
    win = np.asarray(audio_window)
    frames = win.size // packet_len
    if frames == 0:
        raise ContractError("audio window shorter than one packet")
    feats = normalize_features(frontend(win[: frames * packet_len].reshape(frames, packet_len), f_s))
    return np.concatenate([feats.mean(axis=0), feats.max(axis=0)])


def envelope_features(audio_window: Array, bins: int = 256) -> Array:
    """Max-pooled absolute-amplitude envelope: what a frequency-blind
    waveform-image baseline gets to see."""
    win = np.abs(np.asarray(audio_window, dtype=np.float64))
    if win.size < bins:
        raise ContractError(f"window must hold at least {bins} samples")
    usable = (win.size // bins) * bins
    return win[:usable].reshape(bins, -1).max(axis=1)


def normalize_envelope(env: Array) -> Array:
    """Per-window standardization of the envelope. Training audio carries a
    drawn SNR and gain; without this the noise floor lands far from the clean
    runtime floor and the policy sees every live window as off-distribution.
    """
    e = np.asarray(env, dtype=np.float64)
    return (e - e.mean()) / (e.std() + 1e-6)


@dataclass(frozen=True)
class EnvisionerDims:
    vision: int
    audio: int  # 16 pooled features, or 256 envelope bins for the baseline
    instruction: int
    memory: int  # historizer readout width; 0 collapses to a zero stream
    qpos: int
    n_stages: int


class Envisioner:
    """Stream encoders -> ctx -> (z, stage logits, control u).

    Streams a policy variant may not read are fed as zeros by the caller; the
    encoder itself is oblivious to the restriction.
    """

    def __init__(self, ps: ParameterSet, rng: np.random.Generator, dims: EnvisionerDims,
                 hidden: int = 64, prefix: str = "envisioner") -> None:
        self.dims = dims
        self.enc_v = Dense(ps, f"{prefix}.enc_v", dims.vision, STREAM_DIM, rng)
        self.enc_a = Dense(ps, f"{prefix}.enc_a", dims.audio, STREAM_DIM, rng)
        self.enc_i = Dense(ps, f"{prefix}.enc_i", dims.instruction, STREAM_DIM, rng)
        self.enc_m = Dense(ps, f"{prefix}.enc_m", max(dims.memory, 1), STREAM_DIM, rng)
        self.z1 = Dense(ps, f"{prefix}.z1", CTX_DIM, hidden, rng)
        self.z2 = Dense(ps, f"{prefix}.z2", hidden, Z_DIM, rng)
        self.stage = Dense(ps, f"{prefix}.stage", Z_DIM, dims.n_stages, rng, zero_init=True)
        self.c1 = Dense(ps, f"{prefix}.c1", CTX_DIM + dims.qpos, hidden, rng)
        self.c2 = Dense(ps, f"{prefix}.c2", hidden, U_DIM, rng)
        self._caches: dict[str, Array] = {}

    def encode(self, vision: Array, audio_feats: Array, instruction: Array,
               memory: Array, qpos: Array) -> tuple[Array, Array, Array, Array]:
        """Batched forward. Returns (z, ctx, stage_logits, u)."""
        c = self._caches
        sv, c["v"] = tanh_f(self.enc_v(vision))
        sa, c["a"] = tanh_f(self.enc_a(audio_feats))
        si, c["i"] = tanh_f(self.enc_i(instruction))
        sm, c["m"] = tanh_f(self.enc_m(memory))
        ctx = np.concatenate([sv, sa, si, sm], axis=-1)
        zh, c["z1"] = tanh_f(self.z1(ctx))
        z, c["z2"] = tanh_f(self.z2(zh))
        stage_logits = self.stage(z)
        cin = np.concatenate([ctx, qpos], axis=-1)
        ch, c["c1"] = tanh_f(self.c1(cin))
        u, c["c2"] = tanh_f(self.c2(ch))
        c["ctx_width"] = ctx.shape[-1]
        return z, ctx, stage_logits, u

    def backward(self, dz: Array, dctx: Array, dstage_logits: Array, du: Array) -> None:
        """Push head gradients back through the shared trunk; any of the
        upstream signals may be zero arrays."""
        c = self._caches
        dch = tanh_back(du, c["c2"])
        dcin = self.c1.backward(tanh_back(self.c2.backward(dch), c["c1"]))
        dctx_total = dctx + dcin[..., : c["ctx_width"]]
        dz_total = dz + self.stage.backward(dstage_logits)
        dzh = tanh_back(self.z2.backward(tanh_back(dz_total, c["z2"])), c["z1"])
        dctx_total = dctx_total + self.z1.backward(dzh)
        dv, da, di, dm = np.split(dctx_total, 4, axis=-1)
        self.enc_v.backward(tanh_back(dv, c["v"]))
        self.enc_a.backward(tanh_back(da, c["a"]))
        self.enc_i.backward(tanh_back(di, c["i"]))
        dmem = self.enc_m.backward(tanh_back(dm, c["m"]))
        self._dmem = dmem

    @property
    def memory_grad(self) -> Array:
        """d loss / d memory readout from the last backward (for fold BPTT)."""
        return self._dmem


def stage_loss(stage_logits: Array, labels: Array, weight: float) -> tuple[float, Array]:
    """Weighted mean CE over stage labels; returns (raw loss, dlogits)."""
    loss, cache = softmax_ce(stage_logits, labels)
    return loss, softmax_ce_back(cache, scale=weight)
