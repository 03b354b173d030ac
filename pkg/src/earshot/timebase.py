"""Integer-exact bookkeeping between a control clock and an audio sample clock.

A control cycle t maps to the most recent available audio sample index
n_t = floor(t * f_s / f_c), computed in exact integer arithmetic so the
mapping never drifts for any episode length. Everything downstream (windows,
packet cuts, vanishing checks) is derived from these indices, never from
float seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, ScheduleError


@dataclass(frozen=True)
class TimingConfig:
    """Clock rates and loop geometry for one co-simulated episode.

    f_c: control/decision rate in Hz.
    f_s: audio sample rate in Hz.
    tau_sys: aggregate system latency in whole cycles (capture + compute).
    T: episode length in cycles; the final cycle index is T.
    H: action chunk length in cycles.
    H_exec: cycles executed per chunk before re-querying (default schedule).
    T_win: per-query audio window length in seconds.
    L: audio packet length in samples for streaming consumers.
    """

    f_c: int = 30
    f_s: int = 16_000
    tau_sys: int = 0
    T: int = 900
    H: int = 32
    H_exec: int = 32
    T_win: float = 4.0
    L: int = 640

    def __post_init__(self) -> None:
        if self.f_c < 1:
            raise ConfigError("f_c must be >= 1")
        if self.f_s < self.f_c:
            raise ConfigError("f_s must be >= f_c")
        if self.tau_sys < 0:
            raise ConfigError("tau_sys must be >= 0")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.H < 1:
            raise ConfigError("H must be >= 1")
        if not (1 <= self.H_exec <= self.H):
            raise ConfigError("H_exec must satisfy 1 <= H_exec <= H")
        if not self.T_win > 0:
            raise ConfigError("T_win must be > 0")
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if self.n_win < 1:
            raise ConfigError("T_win too short: window would hold no samples")

    @property
    def n_win(self) -> int:
        """Window length in samples, floor(f_s * T_win)."""
        return int(self.f_s * self.T_win)


def sample_index(t: int, cfg: TimingConfig) -> int:
    """Most recent audio sample index available at cycle t: floor(t*f_s/f_c)."""
    t = int(t)
    if t < 0:
        raise ScheduleError(f"cycle must be >= 0, got {t}")
    # Python ints: exact for any episode length, no float drift.
    return (t * cfg.f_s) // cfg.f_c


def delayed_index(t: int, cfg: TimingConfig) -> int:
    """Cycle whose data is actually visible at cycle t: max(0, t - tau_sys)."""
    return max(0, int(t) - cfg.tau_sys)


def window_bounds(n_delayed: int, cfg: TimingConfig) -> tuple[int, int]:
    """Half-open sample range [start, stop) of the query window ending at n_delayed.

    start may be negative near the episode head; readers zero-fill that part.
    """
    stop = int(n_delayed) + 1
    return stop - cfg.n_win, stop


def evidence_vanished(n_e: int, d_e: int, t_next: int, cfg: TimingConfig) -> bool:
    """True iff the event occupying samples [n_e, n_e + d_e) lies entirely
    before the window of the next decision at cycle t_next.

    A zero-length event carries no evidence and counts as vanished.
    """
    if d_e < 0:
        raise ScheduleError("event duration must be >= 0 samples")
    if d_e == 0:
        return True
    start, _ = window_bounds(sample_index(delayed_index(t_next, cfg), cfg), cfg)
    return n_e + d_e <= start


@dataclass(frozen=True)
class DecisionSchedule:
    """Cycles at which the policy is queried; strictly increasing, starts at 0."""

    cycles: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.cycles:
            raise ScheduleError("schedule needs at least one decision cycle")
        if self.cycles[0] != 0:
            raise ScheduleError("first decision must be at cycle 0")
        for a, b in zip(self.cycles, self.cycles[1:]):
            if b <= a:
                raise ScheduleError("decision cycles must be strictly increasing")

    @classmethod
    def default(cls, cfg: TimingConfig) -> "DecisionSchedule":
        """Query every H_exec cycles while the episode is still running."""
        return cls(tuple(range(0, cfg.T, cfg.H_exec)))

    @property
    def deltas(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.cycles, self.cycles[1:]))

    def __len__(self) -> int:
        return len(self.cycles)


def gap(k: int, sched: DecisionSchedule, cfg: TimingConfig) -> int:
    """Blind-interval length in cycles between decision k and the next query:
    the schedule delta plus the system latency."""
    if not (0 <= k < len(sched.cycles) - 1):
        raise ScheduleError(f"gap undefined for decision {k} of {len(sched.cycles)}")
    return sched.deltas[k] + cfg.tau_sys


def mem_horizon_ok(t_mem: float, sched: DecisionSchedule, cfg: TimingConfig) -> bool:
    """Whether a memory horizon of t_mem seconds covers the longest blind interval."""
    max_delta = max(sched.deltas) if len(sched.cycles) > 1 else cfg.H_exec
    return t_mem >= (max_delta + cfg.tau_sys) / cfg.f_c
