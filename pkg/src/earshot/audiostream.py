"""Streaming episode audio: a growable ring, sample-exact clip injection,
causal window/packet reads, tiny synthesizers, and WAV persistence.

Mixing convention: the ring accumulates float64 sums of contributions that are
snapped to a fixed 2^-24 grid. Sums of that form stay exact in float64 for any
realistic episode, so superposing clips in any order yields bit-identical
buffers. Readers clamp to [-1, 1]; the unclamped sums stay inspectable.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, ScheduleError
from .timebase import TimingConfig, delayed_index, sample_index, window_bounds

MIX_GRID = float(2**24)


class AudioRing:
    """Append-ordered episode audio with superposition into past or future.

    write_head counts committed samples; reads stop there. Injection may land
    beyond the head (scheduled clips); those sums become audible once append()
    commits the region.
    """

    def __init__(self, capacity: int = 4096) -> None:
        self._buf = np.zeros(max(int(capacity), 16), dtype=np.float64)
        self._written = 0

    @property
    def write_head(self) -> int:
        return self._written

    def _ensure(self, n: int) -> None:
        if n <= self._buf.size:
            return
        grown = max(n, self._buf.size * 2)
        buf = np.zeros(grown, dtype=np.float64)
        buf[: self._buf.size] = self._buf
        self._buf = buf

    @staticmethod
    def _grid(x: np.ndarray) -> np.ndarray:
        return np.round(np.asarray(x, dtype=np.float64) * MIX_GRID) / MIX_GRID

    def append(self, block: np.ndarray) -> None:
        """Commit len(block) new samples, superposing onto any scheduled content."""
        block = self._grid(block)
        end = self._written + block.size
        self._ensure(end)
        self._buf[self._written : end] += block
        self._written = end

    def add_at(self, samples: np.ndarray, start: int) -> None:
        """Superpose samples at absolute index start (past or future)."""
        if start < 0:
            raise ContractError("injection start must be >= 0")
        samples = self._grid(samples)
        end = start + samples.size
        self._ensure(end)
        self._buf[start:end] += samples

    def read(self, start: int, stop: int) -> np.ndarray:
        """Clamped committed samples in [start, stop); start < 0 zero-fills."""
        if stop > self._written:
            raise ContractError(
                f"read past write head: want [{start},{stop}) have {self._written}"
            )
        if stop < start:
            raise ContractError("read range is reversed")
        out = np.zeros(stop - start, dtype=np.float64)
        lo = max(start, 0)
        out[lo - start :] = self._buf[lo:stop]
        return np.clip(out, -1.0, 1.0).astype(np.float32)

    def sums(self, start: int, stop: int) -> np.ndarray:
        """Unclamped mixing sums (diagnostics; exact, order-independent)."""
        self._ensure(stop)
        return self._buf[start:stop].copy()


def episode_samples(cfg: TimingConfig) -> int:
    """Total samples in a full episode: indices 0 .. sample_index(T)."""
    return sample_index(cfg.T, cfg) + 1


def inject(ring: AudioRing, clip: np.ndarray, onset_cycle: int, cfg: TimingConfig) -> None:
    """Superpose a rendered clip starting at the onset cycle's sample index.

    Clips running past the episode end are truncated; onsets beyond the end
    are rejected.
    """
    if not (0 <= onset_cycle <= cfg.T):
        raise ScheduleError(f"clip onset cycle {onset_cycle} outside [0, {cfg.T}]")
    start = sample_index(onset_cycle, cfg)
    keep = min(int(clip.size), episode_samples(cfg) - start)
    if keep > 0:
        ring.add_at(np.asarray(clip[:keep]), start)


def window(ring: AudioRing, t: int, cfg: TimingConfig) -> np.ndarray:
    """The N_win samples visible to a decision at cycle t, zero-padded at the
    episode head. Errors if the ring has not been filled through n_t yet."""
    start, stop = window_bounds(sample_index(delayed_index(t, cfg), cfg), cfg)
    return ring.read(start, stop)


def packets_between(
    ring: AudioRing,
    n_prev: int,
    n_now: int,
    carry: np.ndarray | None,
    cfg: TimingConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Cut the samples in (n_prev, n_now] plus any carried remainder into
    L-sample packets. Returns (packets of shape (k, L), new carry).

    Chaining calls over consecutive boundaries reproduces the packet stream a
    per-sample consumer would see; packet edges stay aligned to absolute
    multiples of L when carries are threaded through.
    """
    if n_now < n_prev:
        raise ContractError("packet boundaries are reversed")
    fresh = ring.read(n_prev + 1, n_now + 1)
    if carry is None:
        carry = np.zeros(0, dtype=np.float32)
    stream = np.concatenate([np.asarray(carry, dtype=np.float32), fresh])
    k = stream.size // cfg.L
    packets = stream[: k * cfg.L].reshape(k, cfg.L)
    return packets, stream[k * cfg.L :].copy()


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SoundProgram:
    """Parameters for the one-shot clip generators.

    kind: tone | chirp | impact | band_noise | background.
    freq_end only matters for chirps; its sign relative to freq encodes the
    pitch contour (rising vs falling). syllables > 0 multiplies in a smooth
    amplitude envelope with that many bumps (crude speech prosody proxy).
    """

    kind: str
    amplitude: float = 0.5
    freq: float = 440.0
    freq_end: float = 0.0
    decay_s: float = 0.03
    band: tuple[float, float] = (200.0, 2000.0)
    partials: int = 6
    syllables: int = 0


def _check_freq(f: float, f_s: int) -> None:
    if f >= f_s / 2:
        raise ContractError(f"frequency {f} Hz at or above Nyquist ({f_s / 2} Hz)")
    if f < 0:
        raise ContractError("frequency must be >= 0")


def synth(prog: SoundProgram, n: int, f_s: int, rng: np.random.Generator) -> np.ndarray:
    """Render n samples of the program; output is clipped to +-amplitude."""
    if n < 0:
        raise ContractError("sample count must be >= 0")
    a = float(prog.amplitude)
    i = np.arange(n, dtype=np.float64)
    if prog.kind == "tone":
        _check_freq(prog.freq, f_s)
        y = a * np.sin(2.0 * math.pi * prog.freq * i / f_s)
    elif prog.kind == "chirp":
        _check_freq(prog.freq, f_s)
        f1 = prog.freq_end if prog.freq_end > 0 else prog.freq
        _check_freq(f1, f_s)
        # Linear sweep freq -> f1 across the clip; instantaneous phase integral.
        sweep = (f1 - prog.freq) / max(n, 1)
        phase = 2.0 * math.pi * (prog.freq * i + 0.5 * sweep * i * i) / f_s
        y = a * np.sin(phase)
    elif prog.kind == "impact":
        _check_freq(prog.freq, f_s)
        y = a * np.exp(-i / (prog.decay_s * f_s)) * np.sin(2.0 * math.pi * prog.freq * i / f_s)
    elif prog.kind == "band_noise":
        lo, hi = prog.band
        _check_freq(hi, f_s)
        if not 0 <= lo < hi:
            raise ContractError("band edges must satisfy 0 <= lo < hi")
        freqs = rng.uniform(lo, hi, prog.partials)
        phases = rng.uniform(0.0, 2.0 * math.pi, prog.partials)
        y = np.zeros(n, dtype=np.float64)
        for f, p in zip(freqs, phases):
            y += np.sin(2.0 * math.pi * f * i / f_s + p)
        y *= a / max(prog.partials, 1)
    elif prog.kind == "background":
        y = rng.uniform(-a, a, n)
    else:
        raise ContractError(f"unknown sound program kind {prog.kind!r}")
    if prog.syllables > 0 and n > 0:
        y *= np.sin(math.pi * prog.syllables * i / n) ** 2
    return np.clip(y, -a, a).astype(np.float32)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

SILENCE_FLOOR_POWER = 1e-8  # reference power used when the segment is silent


def augment(
    samples: np.ndarray,
    rng: np.random.Generator,
    snr_db: float | None = None,
    gain_db: float | None = None,
) -> np.ndarray:
    """White noise at a drawn SNR (relative to segment power), then a drawn
    gain, then clamp. snr_db/gain_db override the draws (test hooks);
    snr_db=inf disables the noise."""
    x = np.asarray(samples, dtype=np.float64)
    if snr_db is None:
        snr_db = float(rng.uniform(0.0, 20.0))
    if gain_db is None:
        gain_db = float(rng.uniform(-6.0, 6.0))
    if math.isinf(snr_db):
        noisy = x
    else:
        power = float(np.mean(x * x)) if x.size else 0.0
        if power < 1e-12:
            power = SILENCE_FLOOR_POWER
        sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
        noisy = x + rng.normal(0.0, sigma, x.size)
    out = noisy * 10.0 ** (gain_db / 20.0)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# WAV persistence (mono 16-bit PCM little-endian)
# ---------------------------------------------------------------------------


def wav_bytes(samples: np.ndarray, f_s: int) -> bytes:
    """Encode float samples as a RIFF/WAVE mono 16-bit PCM stream.

    Quantization: round(clamp(x) * 32767), ties to even.
    """
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype(np.int16)
    data = pcm.tobytes()  # little-endian on all supported platforms
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        f_s,
        f_s * 2,
        2,
        16,
        b"data",
        len(data),
    )
    return header + data


def write_wav(path, samples: np.ndarray, f_s: int) -> None:
    with open(path, "wb") as fh:
        fh.write(wav_bytes(samples, f_s))


def read_wav(path) -> tuple[np.ndarray, int]:
    """Decode a mono 16-bit PCM WAV; returns (float32 samples in [-1,1], rate)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 44 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise DataError(f"not a RIFF/WAVE file: {path}")
    (
        fmt_tag,
        fmt_size,
        audio_fmt,
        channels,
        rate,
        _byte_rate,
        _align,
        bits,
        data_tag,
        data_len,
    ) = struct.unpack("<4sIHHIIHH4sI", raw[12:44])
    if fmt_tag != b"fmt " or fmt_size != 16 or audio_fmt != 1:
        raise DataError("only plain PCM WAV is supported")
    if channels != 1 or bits != 16:
        raise DataError("expected mono 16-bit PCM")
    if data_tag != b"data" or 44 + data_len > len(raw):
        raise DataError("malformed WAV data chunk")
    pcm = np.frombuffer(raw[44 : 44 + data_len], dtype="<i2")
    return (pcm.astype(np.float64) / 32767.0).astype(np.float32), rate
