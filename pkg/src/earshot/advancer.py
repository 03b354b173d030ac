"""Future-sound supervision: a deterministic 64-code frame codec and a small
head that predicts the codes of the upcoming blind interval from the fused
latent. The codec has no parameters; the head trains with masked mean CE and
is never evaluated at inference time.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .historizer import BAND_EDGES_HZ, DB_FLOOR
from .learnkit import Dense, ParameterSet, tanh_back, tanh_f
from .timebase import DecisionSchedule, TimingConfig, delayed_index, sample_index

Array = np.ndarray

FRAME_SAMPLES = 1280  # 80 ms at 16 kHz
N_BANDS = 4
ENERGY_BINS = 16
CODEBOOK = N_BANDS * ENERGY_BINS  # 64


def tokenize(samples: Array, f_s: int) -> np.ndarray:
    """Codes for each complete FRAME_SAMPLES frame (hop = frame; trailing
    partial dropped). code = dominant_band * 16 + energy_bin, where energy
    bins split [-80, 0] dB uniformly. Frame j reads only frame j's samples."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("tokenize expects a 1-D sample array")
    frames = x.size // FRAME_SAMPLES
    if frames == 0:
        return np.zeros(0, dtype=np.int64)
    x = x[: frames * FRAME_SAMPLES].reshape(frames, FRAME_SAMPLES)

    power = np.mean(x * x, axis=1)
    rms_db = np.clip(10.0 * np.log10(power + 1e-30), DB_FLOOR, 0.0)
    energy_bin = np.minimum((rms_db - DB_FLOOR) / (-DB_FLOOR) * ENERGY_BINS, ENERGY_BINS - 1)
    energy_bin = energy_bin.astype(np.int64)

    spec = np.fft.rfft(x, axis=1)
    mag2 = spec.real**2 + spec.imag**2
    freqs = np.fft.rfftfreq(FRAME_SAMPLES, 1.0 / f_s)
    band_idx = np.clip(np.searchsorted(BAND_EDGES_HZ[1:-1], freqs, side="right"), 0, 3)
    band_power = np.zeros((frames, N_BANDS))
    for b in range(N_BANDS):
        band_power[:, b] = mag2[:, band_idx == b].sum(axis=1)
    dominant = band_power.argmax(axis=1)

    return dominant * ENERGY_BINS + energy_bin


def future_interval(k: int, sched: DecisionSchedule, cfg: TimingConfig) -> tuple[int, int]:
    """Half-open delayed sample range (n_a, n_b] covered by decision k's blind
    interval to the next query."""
    if not 0 <= k < len(sched.cycles) - 1:
        raise ContractError(f"no following decision after index {k}")
    n_a = sample_index(delayed_index(sched.cycles[k], cfg), cfg)
    n_b = sample_index(delayed_index(sched.cycles[k + 1], cfg), cfg)
    return n_a, n_b


def future_target(audio: Array, k: int, sched: DecisionSchedule, cfg: TimingConfig) -> np.ndarray:
    """Codes of the audio the policy will not hear until the next decision."""
    n_a, n_b = future_interval(k, sched, cfg)
    return tokenize(np.asarray(audio)[n_a + 1 : n_b + 1], cfg.f_s)


def f_max(sched: DecisionSchedule, cfg: TimingConfig) -> int:
    """Fixed logit width: the largest frame count any scheduled interval yields."""
    best = 0
    for k in range(len(sched.cycles) - 1):
        n_a, n_b = future_interval(k, sched, cfg)
        best = max(best, (n_b - n_a) // FRAME_SAMPLES)
    return best


class Advancer:
    """tanh MLP z -> (F_max * 64) logits; final layer zero-initialized so an
    untrained head scores exactly ln 64 per position."""

    def __init__(self, ps: ParameterSet, rng: np.random.Generator, z_dim: int,
                 f_max_positions: int, hidden: int = 128, prefix: str = "advancer") -> None:
        if f_max_positions < 1:
            raise ContractError("advancer needs at least one target position")
        self.f_max = f_max_positions
        self.l1 = Dense(ps, f"{prefix}.l1", z_dim, hidden, rng)
        self.l2 = Dense(ps, f"{prefix}.l2", hidden, f_max_positions * CODEBOOK, rng, zero_init=True)
        self._tanh_cache: Array | None = None

    def predict(self, z: Array) -> Array:
        a, self._tanh_cache = tanh_f(self.l1(z))
        logits = self.l2(a)
        return logits.reshape(z.shape[0], self.f_max, CODEBOOK)

    def backward(self, dlogits: Array) -> Array:
        da = self.l2.backward(dlogits.reshape(dlogits.shape[0], -1))
        return self.l1.backward(tanh_back(da, self._tanh_cache))


def pad_codes(codes_list: list[np.ndarray], f_max_positions: int) -> Array:
    """Stack variable-length code vectors into (B, F_max) padded with -1."""
    out = np.full((len(codes_list), f_max_positions), -1, dtype=np.int64)
    for i, c in enumerate(codes_list):
        if c.size > f_max_positions:
            raise ContractError("target longer than the advancer's F_max")
        out[i, : c.size] = c
    return out


def code_loss(logits: Array, codes: Array) -> tuple[float, Array]:
    """Mean-over-samples of per-sample mean CE across that sample's first F
    positions (masked, never truncated). Samples with F=0 contribute 0.
    Returns (loss, dlogits)."""
    b, f_positions, k = logits.shape
    if codes.shape != (b, f_positions):
        raise ContractError("codes must be padded to (B, F_max)")
    mask = codes >= 0
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    safe = np.maximum(codes, 0)
    nll = -np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    counts = mask.sum(axis=1)
    per_sample = np.where(counts > 0, (nll * mask).sum(axis=1) / np.maximum(counts, 1), 0.0)
    loss = float(per_sample.mean())

    probs = np.exp(logp)
    grad = probs.copy()
    np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], axis=-1) - 1.0, axis=-1)
    w = np.where(mask, 1.0, 0.0) / np.maximum(counts, 1)[:, None] / b
    return loss, grad * w[..., None]
