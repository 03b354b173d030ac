"""Seven desk-scale manipulation environments driven by sound cues.

The robot is a planar kinematic proxy: one effector (x, y, gripper) or two
for the arm-selection tasks. Sounds are injected sample-exactly into an
AudioRing; cue ground truth lives on a privileged event timeline that the
judge reads and policies never see. Scripted experts provide demonstrations
that react to cues only at or after their onset, so demos are sound-causal
by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audiostream import AudioRing, SoundProgram, episode_samples, inject, synth, window
from .errors import ContractError
from .timebase import TimingConfig, delayed_index, sample_index

Array = np.ndarray

TASK_NAMES = (
    "alarm_clock",
    "microwave",
    "check_yes",
    "check_materials",
    "pour_water",
    "boil_water",
    "interrupt",
)
VISION_DIM = 8
INSTRUCTION_DIM = len(TASK_NAMES) + 4  # one-hot task id | 4 parameter slots
TRANSCRIPT_VOCAB = ("yes", "reset")
TRANSCRIPT_DIM = 4  # per-token counts | any-speech flag | pad

# loud enough that the load-time augmentation SNR draw (taken against whole
# episode power) lands near this same floor: keeps training windows and live
# windows on one scale
BACKGROUND_AMP = 0.05
EGO_NOISE_AMP = 0.03

POUR_RADIUS = 0.05
WITHDRAW_RADIUS = 0.12
POUR_BAND = 0.08
MATERIAL_FREQS = (300.0, 600.0)  # impact fundamental per material id
LISTEN_S = 0.8


@dataclass(frozen=True)
class TaskParams:
    """Geometry tolerances shared by all tasks; exposed in run configs."""

    eps: float = 0.02
    eps_hold: float = 0.03
    v_max: float = 0.5
    grip_rate: float = 4.0
    sigma_v: float = 0.005

    def __post_init__(self) -> None:
        if min(self.eps, self.eps_hold, self.v_max, self.grip_rate) <= 0:
            raise ContractError("task parameters must be positive")


@dataclass
class CueEvent:
    onset: int  # cycle
    dur_cycles: int
    dur_samples: int
    name: str
    cue: bool = True  # judged (t_snd source); False = audible scenery only


@dataclass
class WorldState:
    task: str
    t: int
    qpos: Array
    start_qpos: Array
    geom: dict[str, Array]
    hidden: dict
    events: list[CueEvent]
    instruction: Array
    params: TaskParams
    audio_plan: list[tuple[int, Array]] = field(default_factory=list)
    vision_hist: list[Array] = field(default_factory=list)
    qpos_hist: list[Array] = field(default_factory=list)
    goal_cycle: int | None = None
    terminal: bool = False
    phase: float = 0.0  # pour-tone phase accumulator


def grip_indices(d_qpos: int) -> tuple[int, ...]:
    return (2,) if d_qpos == 3 else (2, 5)


def planar_slices(d_qpos: int) -> tuple[slice, ...]:
    return (slice(0, 2),) if d_qpos == 3 else (slice(0, 2), slice(3, 5))


def track(q: Array, cmd: Array, params: TaskParams, cfg: TimingConfig) -> Array:
    """One cycle of rate-limited tracking toward the commanded pose."""
    out = q.copy()
    step_cap = params.v_max / cfg.f_c
    for sl in planar_slices(q.size):
        delta = cmd[sl] - q[sl]
        dist = float(np.hypot(delta[0], delta[1]))
        out[sl] = cmd[sl] if dist <= step_cap else q[sl] + delta * (step_cap / dist)
    gcap = params.grip_rate / cfg.f_c
    for gi in grip_indices(q.size):
        out[gi] = q[gi] + float(np.clip(cmd[gi] - q[gi], -gcap, gcap))
        out[gi] = float(np.clip(out[gi], 0.0, 1.0))
    return out


def _dist(a: Array, b: Array) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def _cycles(seconds: float, cfg: TimingConfig) -> int:
    return max(1, int(round(seconds * cfg.f_c)))


def _clip_event(onset: int, clip: Array, name: str, cfg: TimingConfig, cue: bool = True) -> CueEvent:
    dur_cyc = max(1, math.ceil(clip.size * cfg.f_c / cfg.f_s))
    return CueEvent(onset=onset, dur_cycles=dur_cyc, dur_samples=int(clip.size), name=name, cue=cue)


def _onset_in(rng: np.random.Generator, cfg: TimingConfig, lo: float = 0.2, hi: float = 0.7) -> int:
    return int(rng.integers(int(lo * cfg.T), int(hi * cfg.T) + 1))


class TaskLogic:
    """Per-task hooks; subclasses fill in geometry, cues, goals, experts."""

    name: str = ""
    d_qpos: int = 3
    stages: tuple[str, ...] = ()

    def setup(self, state: WorldState, rng: np.random.Generator, cfg: TimingConfig) -> None:
        raise NotImplementedError

    def instruction_params(self, state: WorldState) -> list[float]:
        return [0.0, 0.0, 0.0, 0.0]

    def vision(self, state: WorldState) -> Array:
        raise NotImplementedError

    def goal(self, state: WorldState) -> bool:
        raise NotImplementedError

    def process(self, state: WorldState, ring: AudioRing, cfg: TimingConfig,
                n_prev: int, n_now: int) -> None:
        pass  # hidden dynamics and action-triggered sounds

    def expert(self, state: WorldState, cfg: TimingConfig) -> tuple[Array, int]:
        """(full qpos command, stage index) for the scripted oracle."""
        raise NotImplementedError

    # shared helpers ------------------------------------------------------
    def _fired(self, state: WorldState, name: str) -> bool:
        return any(e.name == name and e.onset <= state.t for e in state.events)

    def _pad_vision(self, vals: list[float]) -> Array:
        out = np.zeros(VISION_DIM)
        out[: len(vals)] = vals
        return out


def _jitter(rng: np.random.Generator, x: float, y: float, r: float = 0.02) -> Array:
    return np.array([x, y]) + rng.uniform(-r, r, 2)


class AlarmClock(TaskLogic):
    name = "alarm_clock"
    d_qpos = 6
    stages = ("wait", "press", "done")

    def setup(self, state, rng, cfg):
        g = state.geom
        g["button"] = _jitter(rng, float(rng.uniform(-0.25, 0.25)), float(rng.uniform(0.28, 0.40)), 0.0)
        onset = _onset_in(rng, cfg)
        dur = float(rng.uniform(1.0, 2.0))
        clip = synth(SoundProgram("tone", amplitude=0.4, freq=900.0, syllables=max(2, int(dur * 4))),
                     int(dur * cfg.f_s), cfg.f_s, rng)
        state.audio_plan.append((sample_index(onset, cfg), clip))
        state.events.append(_clip_event(onset, clip, "alarm", cfg))
        # arm nearer the button presses; the other must hold still
        d_left = _dist(state.qpos[0:2], g["button"])
        d_right = _dist(state.qpos[3:5], g["button"])
        state.hidden["actor"] = 0 if d_left <= d_right else 1

    def vision(self, state):
        return self._pad_vision(list(state.geom["button"]))

    def goal(self, state):
        q, s = state.qpos, state.start_qpos
        for actor in (0, 1):
            a, o = planar_slices(6)[actor], planar_slices(6)[1 - actor]
            if (_dist(q[a], state.geom["button"]) <= state.params.eps
                    and q[grip_indices(6)[actor]] >= 0.8
                    and _dist(q[o], s[o]) <= state.params.eps_hold):
                return True
        return False

    def expert(self, state, cfg):
        cmd = state.start_qpos.copy()
        if state.goal_cycle is not None:
            return state.qpos.copy(), 2
        if self._fired(state, "alarm"):
            actor = state.hidden["actor"]
            sl = planar_slices(6)[actor]
            cmd[sl] = state.geom["button"]
            cmd[grip_indices(6)[actor]] = 1.0
            return cmd, 1
        return cmd, 0


class Microwave(TaskLogic):
    name = "microwave"
    d_qpos = 3
    stages = ("wait", "approach", "open", "done")

    def setup(self, state, rng, cfg):
        state.geom["handle"] = _jitter(rng, float(rng.uniform(-0.3, 0.3)), float(rng.uniform(0.30, 0.45)), 0.0)
        onset = _onset_in(rng, cfg)
        ding = synth(SoundProgram("impact", amplitude=0.6, freq=2000.0, decay_s=0.05),
                     int(rng.uniform(0.08, 0.2) * cfg.f_s), cfg.f_s, rng)
        state.audio_plan.append((sample_index(onset, cfg), ding))
        state.events.append(_clip_event(onset, ding, "ding", cfg))
        # clank distractors: similar envelope, different band, never judged
        guard = _cycles(1.2, cfg)
        placed: list[int] = []
        want = int(rng.integers(2, 5))
        for _ in range(200):
            if len(placed) >= want:
                break
            c = int(rng.integers(int(0.05 * cfg.T), int(0.9 * cfg.T)))
            if abs(c - onset) < guard or any(abs(c - p) < _cycles(0.6, cfg) for p in placed):
                continue
            placed.append(c)
            clank = synth(SoundProgram("impact", amplitude=0.6, freq=500.0, decay_s=0.08),
                          int(rng.uniform(0.08, 0.2) * cfg.f_s), cfg.f_s, rng)
            state.audio_plan.append((sample_index(c, cfg), clank))

    def vision(self, state):
        return self._pad_vision(list(state.geom["handle"]))

    def goal(self, state):
        return (_dist(state.qpos[0:2], state.geom["handle"]) <= state.params.eps
                and state.qpos[2] >= 0.8)

    def expert(self, state, cfg):
        if state.goal_cycle is not None:
            return state.qpos.copy(), 3
        if self._fired(state, "ding"):
            cmd = np.array([*state.geom["handle"], 1.0])
            near = _dist(state.qpos[0:2], state.geom["handle"]) <= 3 * state.params.eps
            return cmd, (2 if near else 1)
        return state.start_qpos.copy(), 0


class CheckYes(TaskLogic):
    name = "check_yes"
    d_qpos = 3
    stages = ("lift", "hold", "keep", "switch", "done")

    def setup(self, state, rng, cfg):
        g = state.geom
        g["bottle_a"] = _jitter(rng, -0.25, 0.30)
        g["bottle_b"] = _jitter(rng, 0.25, 0.30)
        g["delivery"] = _jitter(rng, 0.0, 0.55)
        state.hidden["first"] = int(rng.integers(0, 2))
        state.hidden["affirm"] = bool(rng.integers(0, 2))
        onset = _onset_in(rng, cfg, 0.2, 0.5)
        # prosody lives in the pitch contour; the transcript is "yes" either way
        f0, f1 = (260.0, 170.0) if state.hidden["affirm"] else (180.0, 330.0)
        clip = synth(SoundProgram("chirp", amplitude=0.5, freq=f0, freq_end=f1, syllables=1),
                     int(0.6 * cfg.f_s), cfg.f_s, rng)
        state.audio_plan.append((sample_index(onset, cfg), clip))
        state.events.append(_clip_event(onset, clip, "yes", cfg))

    def instruction_params(self, state):
        return [float(state.hidden["first"]), 0.0, 0.0, 0.0]

    def _bottles(self, state):
        first = state.geom["bottle_a"] if state.hidden["first"] == 0 else state.geom["bottle_b"]
        other = state.geom["bottle_b"] if state.hidden["first"] == 0 else state.geom["bottle_a"]
        return first, other

    def vision(self, state):
        g = state.geom
        return self._pad_vision([*g["bottle_a"], *g["bottle_b"], *g["delivery"]])

    def goal(self, state):
        _, other = self._bottles(state)
        target = state.geom["delivery"] if state.hidden["affirm"] else other
        return _dist(state.qpos[0:2], target) <= state.params.eps and state.qpos[2] >= 0.8

    def expert(self, state, cfg):
        if state.goal_cycle is not None:
            return state.qpos.copy(), 4
        first, other = self._bottles(state)
        lift = first + np.array([0.0, 0.12])
        ev = state.events[0]
        if state.t >= ev.onset + ev.dur_cycles:  # utterance finished, intent known
            if state.hidden["affirm"]:
                return np.array([*state.geom["delivery"], 1.0]), 2
            near_other = _dist(state.qpos[0:2], other) <= 1.5 * state.params.eps
            return np.array([*other, 1.0 if near_other else 0.0]), 3
        at_lift = _dist(state.qpos[0:2], lift) <= state.params.eps and state.qpos[2] >= 0.9
        if at_lift:
            return np.array([*lift, 1.0]), 1
        near_first = _dist(state.qpos[0:2], first) <= 1.5 * state.params.eps
        if state.qpos[2] >= 0.9:
            return np.array([*lift, 1.0]), 0
        return np.array([*first, 1.0 if near_first else 0.0]), 0


class CheckMaterials(TaskLogic):
    name = "check_materials"
    d_qpos = 3
    stages = ("pick", "drop", "listen", "transfer", "done")

    def setup(self, state, rng, cfg):
        g = state.geom
        g["cube"] = _jitter(rng, 0.0, 0.15)
        g["plate_0"] = _jitter(rng, -0.25, 0.38)
        g["plate_1"] = _jitter(rng, 0.25, 0.38)
        state.hidden["target_material"] = int(rng.integers(0, 2))
        state.hidden["target_plate"] = int(rng.integers(0, 2))
        state.hidden["holding"] = False
        state.hidden["picked_once"] = False
        state.hidden["drops"] = []  # (cycle, plate index)

    def instruction_params(self, state):
        return [float(state.hidden["target_material"]), 0.0, 0.0, 0.0]

    def vision(self, state):
        g = state.geom
        return self._pad_vision([*g["cube"], *g["plate_0"], *g["plate_1"],
                                 1.0 if state.hidden["holding"] else 0.0])

    def _plate_material(self, state, plate: int) -> int:
        tm = state.hidden["target_material"]
        return tm if plate == state.hidden["target_plate"] else 1 - tm

    def goal(self, state):
        if state.hidden["holding"] or not state.hidden["drops"]:
            return False
        tgt = state.geom[f"plate_{state.hidden['target_plate']}"]
        return _dist(state.geom["cube"], tgt) <= state.params.eps

    def process(self, state, ring, cfg, n_prev, n_now):
        h, eps, q = state.hidden, state.params.eps, state.qpos
        if h["holding"]:
            state.geom["cube"] = q[0:2].copy()
            if q[2] < 0.5:  # released: lands on a plate if over one
                h["holding"] = False
                for plate in (0, 1):
                    p = state.geom[f"plate_{plate}"]
                    if _dist(q[0:2], p) <= 1.5 * eps:
                        state.geom["cube"] = p.copy()
                        h["drops"].append((state.t, plate))
                        freq = MATERIAL_FREQS[self._plate_material(state, plate)]
                        rng = np.random.default_rng(0)  # impact synth is rng-free
                        clip = synth(SoundProgram("impact", amplitude=0.6, freq=freq, decay_s=0.08),
                                     int(0.15 * cfg.f_s), cfg.f_s, rng)
                        inject(ring, clip, state.t, cfg)
                        state.events.append(_clip_event(state.t, clip, "impact", cfg))
                        break
        elif q[2] >= 0.8 and _dist(q[0:2], state.geom["cube"]) <= 1.5 * eps:
            h["holding"] = True
            h["picked_once"] = True

    def expert(self, state, cfg):
        h, eps = state.hidden, state.params.eps
        if state.goal_cycle is not None:
            return state.qpos.copy(), 4
        cube = state.geom["cube"]
        if h["holding"]:
            if not h["drops"]:  # first carry: always probe plate 0
                dest, stage = state.geom["plate_0"], 1
            else:
                dest, stage = state.geom[f"plate_{1 - h['drops'][0][1]}"], 3
            near = _dist(state.qpos[0:2], dest) <= 0.8 * eps
            return np.array([*dest, 0.0 if near else 1.0]), stage
        if h["drops"]:
            last_t, plate = h["drops"][-1]
            if state.t < last_t + _cycles(LISTEN_S, cfg):
                return state.qpos.copy(), 2  # hold still and listen
            # privileged: impact told us whether the probe plate was right
            if self._plate_material(state, plate) == h["target_material"]:
                return state.qpos.copy(), 4
            near = _dist(state.qpos[0:2], cube) <= 1.5 * eps
            return np.array([*cube, 1.0 if near else 0.0]), 3
        near = _dist(state.qpos[0:2], cube) <= 1.5 * eps
        return np.array([*cube, 1.0 if near else 0.0]), 0


class PourWater(TaskLogic):
    name = "pour_water"
    d_qpos = 3
    stages = ("approach", "pour", "withdraw", "done")

    def setup(self, state, rng, cfg):
        state.geom["container"] = _jitter(rng, 0.0, 0.40)
        state.hidden["fill"] = 0.0
        state.hidden["rate"] = float(rng.uniform(0.04, 0.07))
        state.hidden["level"] = float(rng.uniform(0.40, 0.80))
        state.hidden["band_event"] = None
        state.qpos[2] = state.start_qpos[2] = 1.0  # vessel starts in hand

    def instruction_params(self, state):
        return [state.hidden["level"], 0.0, 0.0, 0.0]

    def vision(self, state):
        return self._pad_vision(list(state.geom["container"]))

    def _pouring(self, state) -> bool:
        return (state.qpos[2] >= 0.8
                and _dist(state.qpos[0:2], state.geom["container"]) <= POUR_RADIUS)

    def goal(self, state):
        lam, fill = state.hidden["level"], state.hidden["fill"]
        return (abs(fill - lam) <= POUR_BAND
                and _dist(state.qpos[0:2], state.geom["container"]) >= WITHDRAW_RADIUS)

    def process(self, state, ring, cfg, n_prev, n_now):
        h = state.hidden
        if not self._pouring(state):
            return
        h["fill"] = min(1.0, h["fill"] + h["rate"] / cfg.f_c)
        freq = 350.0 + 900.0 * h["fill"]
        n = n_now - n_prev
        idx = np.arange(1, n + 1, dtype=np.float64)
        block = 0.25 * np.sin(state.phase + 2.0 * math.pi * freq * idx / cfg.f_s)
        state.phase = (state.phase + 2.0 * math.pi * freq * n / cfg.f_s) % (2.0 * math.pi)
        ring.add_at(block.astype(np.float32), n_prev + 1)
        lam = h["level"]
        if h["band_event"] is None and abs(h["fill"] - lam) <= POUR_BAND:
            ev = CueEvent(onset=state.t, dur_cycles=1, dur_samples=n, name="band")
            h["band_event"] = ev
            state.events.append(ev)
        elif h["band_event"] is not None and abs(h["fill"] - lam) <= POUR_BAND:
            ev = h["band_event"]
            ev.dur_cycles = state.t - ev.onset + 1
            ev.dur_samples += n

    def expert(self, state, cfg):
        if state.goal_cycle is not None:
            return state.qpos.copy(), 3
        h = state.hidden
        if h["fill"] >= h["level"]:
            return np.array([*state.start_qpos[0:2], 1.0]), 2
        if _dist(state.qpos[0:2], state.geom["container"]) <= 0.6 * POUR_RADIUS:
            return np.array([*state.geom["container"], 1.0]), 1
        return np.array([*state.geom["container"], 1.0]), 0


class BoilWater(TaskLogic):
    name = "boil_water"
    d_qpos = 3
    stages = ("wait", "act", "done")
    RAMP_S = 4.0

    def setup(self, state, rng, cfg):
        state.geom["knob"] = _jitter(rng, float(rng.uniform(-0.3, 0.3)), float(rng.uniform(0.30, 0.42)), 0.0)
        t_boil = _onset_in(rng, cfg)
        state.hidden["t_boil"] = t_boil
        ramp = _cycles(self.RAMP_S, cfg)
        n_total = episode_samples(cfg)
        cycles = np.arange(cfg.T + 1)
        phase = np.clip(1.0 - (t_boil - cycles) / ramp, 0.0, 1.0)
        # simmer hiss whose loudness tracks the boil phase
        hiss = synth(SoundProgram("band_noise", amplitude=1.0, band=(800.0, 2500.0), partials=8),
                     n_total, cfg.f_s, rng)
        env = np.interp(np.arange(n_total), [sample_index(int(c), cfg) for c in cycles], phase)
        state.audio_plan.append((0, hiss * (0.02 + 0.07 * env).astype(np.float32)))
        # bubble pops whose rate rises toward the boil
        for c in range(cfg.T):
            if rng.random() < (0.5 + 11.0 * phase[c]) / cfg.f_c:
                pop = synth(SoundProgram("impact", amplitude=0.35,
                                         freq=float(rng.uniform(250.0, 450.0)), decay_s=0.03),
                            int(0.06 * cfg.f_s), cfg.f_s, rng)
                state.audio_plan.append((sample_index(c, cfg), pop))
        dur = (cfg.T - t_boil) * cfg.f_s // cfg.f_c
        state.events.append(CueEvent(onset=t_boil, dur_cycles=cfg.T - t_boil,
                                     dur_samples=int(dur), name="boil"))

    def vision(self, state):
        return self._pad_vision(list(state.geom["knob"]))

    def goal(self, state):
        return (_dist(state.qpos[0:2], state.geom["knob"]) <= state.params.eps
                and state.qpos[2] >= 0.8)

    def expert(self, state, cfg):
        if state.goal_cycle is not None:
            return state.qpos.copy(), 2
        if state.t >= state.hidden["t_boil"]:
            return np.array([*state.geom["knob"], 1.0]), 1
        return state.start_qpos.copy(), 0


class Interrupt(TaskLogic):
    name = "interrupt"
    d_qpos = 6
    stages = ("routine", "return", "done")

    def setup(self, state, rng, cfg):
        # the shuttle loop stays away from the start pose so returning home
        # is unambiguously the reset response, never part of the routine
        w1 = _jitter(rng, float(rng.uniform(-0.1, 0.1)), float(rng.uniform(0.30, 0.40)), 0.0)
        state.geom["w1"] = w1
        state.geom["w2"] = w1 + np.array([0.18, 0.0])
        state.hidden["actor"] = int(rng.integers(0, 2))
        state.hidden["departed"] = False
        onset = _onset_in(rng, cfg, 0.2, 0.6)
        clip = synth(SoundProgram("chirp", amplitude=0.5, freq=210.0, freq_end=140.0, syllables=2),
                     int(0.5 * cfg.f_s), cfg.f_s, rng)
        state.audio_plan.append((sample_index(onset, cfg), clip))
        state.events.append(_clip_event(onset, clip, "reset", cfg))

    def vision(self, state):
        return self._pad_vision([*state.geom["w1"], *state.geom["w2"]])

    def goal(self, state):
        if not state.hidden["departed"]:
            return False
        q, s, p = state.qpos, state.start_qpos, state.params
        actor = state.hidden["actor"]
        a, o = planar_slices(6)[actor], planar_slices(6)[1 - actor]
        return _dist(q[a], s[a]) <= p.eps and _dist(q[o], s[o]) <= p.eps_hold

    def process(self, state, ring, cfg, n_prev, n_now):
        actor = planar_slices(6)[state.hidden["actor"]]
        if _dist(state.qpos[actor], state.start_qpos[actor]) > 3 * state.params.eps:
            state.hidden["departed"] = True

    def expert(self, state, cfg):
        cmd = state.start_qpos.copy()
        if state.goal_cycle is not None:
            return state.qpos.copy(), 2
        if self._fired(state, "reset"):
            return cmd, 1
        actor = state.hidden["actor"]
        sl = planar_slices(6)[actor]
        travel = max(_dist(state.start_qpos[sl], state.geom["w1"]),
                     _dist(state.geom["w1"], state.geom["w2"]))
        half = _cycles(travel / state.params.v_max, cfg) + 6
        cmd[sl] = state.geom["w1"] if (state.t // half) % 2 == 0 else state.geom["w2"]
        return cmd, 0


TASKS: dict[str, TaskLogic] = {
    t.name: t for t in (AlarmClock(), Microwave(), CheckYes(), CheckMaterials(),
                        PourWater(), BoilWater(), Interrupt())
}


def task_logic(name: str) -> TaskLogic:
    if name not in TASKS:
        raise ContractError(f"unknown task {name!r}; expected one of {TASK_NAMES}")
    return TASKS[name]


def instruction_vector(task: str, params: list[float]) -> Array:
    vec = np.zeros(INSTRUCTION_DIM)
    vec[TASK_NAMES.index(task)] = 1.0
    vec[len(TASK_NAMES):] = params
    return vec


def reset(task: str, seed: int, cfg: TimingConfig,
          params: TaskParams | None = None) -> tuple[WorldState, Array]:
    """Deterministic episode setup: geometry, cue timeline, rendered clips."""
    logic = task_logic(task)
    params = params or TaskParams()
    rng = np.random.default_rng(seed)
    d = logic.d_qpos
    if d == 6:
        q = np.zeros(6)
        q[0:2] = _jitter(rng, -0.30, 0.0)
        q[3:5] = _jitter(rng, 0.30, 0.0)
    else:
        q = np.zeros(3)
        q[0:2] = _jitter(rng, 0.0, 0.05)
    state = WorldState(task=task, t=0, qpos=q, start_qpos=q.copy(), geom={},
                       hidden={}, events=[], instruction=np.zeros(INSTRUCTION_DIM),
                       params=params)
    # episode-wide noise beds, rendered up front so injection order is fixed
    n_total = episode_samples(cfg)
    bed = synth(SoundProgram("background", amplitude=BACKGROUND_AMP), n_total, cfg.f_s, rng)
    state.audio_plan.append((0, bed))
    state.hidden["ego_track"] = rng.uniform(-1.0, 1.0, n_total).astype(np.float32)
    logic.setup(state, rng, cfg)
    state.instruction = instruction_vector(task, logic.instruction_params(state))
    state.vision_hist.append(logic.vision(state))
    state.qpos_hist.append(state.qpos.copy())
    return state, state.instruction.copy()


def prime_ring(state: WorldState, cfg: TimingConfig) -> AudioRing:
    """Commit the whole episode span and superpose all pre-rendered audio."""
    ring = AudioRing(episode_samples(cfg))
    ring.append(np.zeros(episode_samples(cfg), dtype=np.float32))
    for start, clip in state.audio_plan:
        keep = min(clip.size, episode_samples(cfg) - start)
        if keep > 0:
            ring.add_at(clip[:keep], start)
    return ring


def step(state: WorldState, command: Array, ring: AudioRing, cfg: TimingConfig) -> None:
    """Advance one control cycle under a qpos command."""
    logic = task_logic(state.task)
    command = np.asarray(command, dtype=np.float64)
    if command.shape != state.qpos.shape:
        raise ContractError(f"command shape {command.shape} != qpos {state.qpos.shape}")
    if not np.all(np.isfinite(command)):
        raise ContractError("command must be finite")
    if state.terminal:
        raise ContractError("episode already terminal")
    prev = state.qpos
    n_prev = sample_index(state.t, cfg)
    state.qpos = track(prev, command, state.params, cfg)
    state.t += 1
    n_now = sample_index(state.t, cfg)
    # ego-noise masks listening while the robot moves
    speed = sum(_dist(state.qpos[sl], prev[sl]) for sl in planar_slices(state.qpos.size))
    if speed > 1e-9:
        gain = EGO_NOISE_AMP * min(1.0, speed * cfg.f_c / state.params.v_max)
        ring.add_at(state.hidden["ego_track"][n_prev + 1 : n_now + 1] * gain, n_prev + 1)
    logic.process(state, ring, cfg, n_prev, n_now)
    state.vision_hist.append(logic.vision(state))
    state.qpos_hist.append(state.qpos.copy())
    if state.goal_cycle is None and logic.goal(state):
        state.goal_cycle = state.t
    if state.t >= cfg.T:
        state.terminal = True


def observe(state: WorldState, ring: AudioRing, cfg: TimingConfig,
            noise_rng: np.random.Generator) -> dict:
    """Per-decision observation, assembled strictly from history <= delayed t."""
    tbar = delayed_index(state.t, cfg)
    vision = state.vision_hist[tbar] + noise_rng.normal(0.0, state.params.sigma_v, VISION_DIM)
    return {
        "vision": vision,
        "qpos": state.qpos_hist[tbar].copy(),
        "window": window(ring, state.t, cfg),
        "instruction": state.instruction.copy(),
        "transcript": transcript_counts(state, tbar),
    }


def transcript_counts(state: WorldState, upto_cycle: int) -> Array:
    """Prosody-free speech channel: per-token counts of utterances that have
    finished by the given cycle. Identical for both check_yes contours."""
    out = np.zeros(TRANSCRIPT_DIM)
    for e in state.events:
        if e.name in TRANSCRIPT_VOCAB and e.onset + e.dur_cycles <= upto_cycle:
            out[TRANSCRIPT_VOCAB.index(e.name)] += 1.0
            out[len(TRANSCRIPT_VOCAB)] = 1.0
    return out


def expert_chunk(state: WorldState, cfg: TimingConfig) -> tuple[Array, int]:
    """Scripted oracle chunk: H rows of rate-limited tracking toward the
    current stage target. Transitions happen at decision boundaries only, so
    demonstrations react to cues one decision late at worst, never early."""
    logic = task_logic(state.task)
    cmd, stage = logic.expert(state, cfg)
    rows = np.zeros((cfg.H, state.qpos.size))
    q = state.qpos.copy()
    for i in range(cfg.H):
        q = track(q, cmd, state.params, cfg)
        rows[i] = q
    return rows, stage


def first_cue_cycle(events: list[CueEvent]) -> float:
    onsets = [e.onset for e in events if e.cue]
    return float(min(onsets)) if onsets else math.inf
