"""Episode trace directories: what a run leaves behind for judging and replay.

A trace is a directory with four files:

  meta.json       run description plus the judged timeline summary
  audio.wav       committed microphone signal up to termination (mono PCM16)
  events.jsonl    one row per timeline event: {"t", "kind", "name"}
  decisions.jsonl one row per decision: {"k", "t_k", "qpos", "vision", "stage", "chunk"}

Event kinds are "cue_onset", "cue_end" and "goal".  Scheduled sounds that the
episode never reached (termination before their onset) are dropped, and the
audio is truncated to match, so a trace only ever describes what was audible.
Infinite times serialize as the string "inf".
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .audiostream import read_wav, write_wav
from .errors import DataError
from .timebase import TimingConfig, sample_index


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def _encode_time(t: float):
    return "inf" if math.isinf(t) else t


def _decode_time(raw) -> float:
    if raw == "inf":
        return math.inf
    return float(raw)


@dataclass
class EpisodeTrace:
    task: str
    seed: int
    policy: str
    timing: TimingConfig
    final_t: int
    t_snd: float
    t_goal: float
    mode: str = "full"
    outcome: str = ""  # verdict, filled in by the judge before saving
    instruction: list = field(default_factory=list)
    events: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    audio: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))


_KIND_RANK = {"cue_onset": 0, "cue_end": 1, "goal": 2}


def from_episode(state, ring, cfg: TimingConfig, decisions: list, policy: str,
                 seed: int, mode: str = "full") -> EpisodeTrace:
    """Freeze a finished (or early-terminated) world episode into a trace."""
    final_t = state.t
    rows = []
    for ev in state.events:
        if ev.onset > final_t:
            continue  # never reached; the world beyond termination is unwritten
        rows.append({"t": int(ev.onset), "kind": "cue_onset", "name": ev.name})
        end = ev.onset + ev.dur_cycles
        if end <= final_t:
            rows.append({"t": int(end), "kind": "cue_end", "name": ev.name})
    t_goal = math.inf
    if state.goal_cycle is not None:
        t_goal = float(state.goal_cycle)
        rows.append({"t": int(state.goal_cycle), "kind": "goal", "name": state.task})
    rows.sort(key=lambda r: (r["t"], _KIND_RANK[r["kind"]], r["name"]))
    onsets = [r["t"] for r in rows if r["kind"] == "cue_onset"]
    t_snd = float(min(onsets)) if onsets else math.inf
    n_audio = sample_index(final_t, cfg) + 1
    return EpisodeTrace(
        task=state.task,
        seed=seed,
        policy=policy,
        timing=cfg,
        final_t=final_t,
        t_snd=t_snd,
        t_goal=t_goal,
        mode=mode,
        instruction=_jsonable(state.instruction),
        events=rows,
        decisions=[_jsonable(d) for d in decisions],
        audio=ring.read(0, n_audio).astype(np.float32),
    )


def save_trace(trace: EpisodeTrace, path) -> None:
    os.makedirs(path, exist_ok=True)
    t = trace.timing
    meta = {
        "task": trace.task,
        "seed": trace.seed,
        "policy": trace.policy,
        "mode": trace.mode,
        "outcome": trace.outcome,
        "instruction": _jsonable(trace.instruction),
        "final_t": trace.final_t,
        "t_snd": _encode_time(trace.t_snd),
        "t_goal": _encode_time(trace.t_goal),
        "timing": {
            "f_c": t.f_c, "f_s": t.f_s, "tau_sys": t.tau_sys, "T": t.T,
            "H": t.H, "H_exec": t.H_exec, "T_win": t.T_win, "L": t.L,
        },
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        fh.write(canonical_json(meta) + "\n")
    with open(os.path.join(path, "events.jsonl"), "w") as fh:
        for row in trace.events:
            fh.write(canonical_json(row) + "\n")
    with open(os.path.join(path, "decisions.jsonl"), "w") as fh:
        for row in trace.decisions:
            fh.write(canonical_json(row) + "\n")
    write_wav(os.path.join(path, "audio.wav"), trace.audio, t.f_s)


def _read_jsonl(path) -> list:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def load_trace(path) -> EpisodeTrace:
    meta_path = os.path.join(path, "meta.json")
    if not os.path.isfile(meta_path):
        raise DataError(f"not a trace directory (no meta.json): {path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    try:
        timing = TimingConfig(**meta["timing"])
        trace = EpisodeTrace(
            task=meta["task"],
            seed=int(meta["seed"]),
            policy=meta["policy"],
            timing=timing,
            final_t=int(meta["final_t"]),
            t_snd=_decode_time(meta["t_snd"]),
            t_goal=_decode_time(meta["t_goal"]),
            mode=meta["mode"],
            outcome=meta["outcome"],
            instruction=meta["instruction"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed meta.json in {path}: {exc}") from exc
    trace.events = _read_jsonl(os.path.join(path, "events.jsonl"))
    trace.decisions = _read_jsonl(os.path.join(path, "decisions.jsonl"))
    audio, rate = read_wav(os.path.join(path, "audio.wav"))
    if rate != timing.f_s:
        raise DataError(f"audio rate {rate} disagrees with meta f_s {timing.f_s}")
    trace.audio = audio
    return trace
