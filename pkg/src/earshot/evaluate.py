"""Sound-causal judging, motion diagnostics, trial aggregation, and sweeps.

The judge reads only the trace event log. An episode succeeds when the goal
was reached inside the window opened by the first audible cue:

  success        t_snd <= t_goal <= T
  false_trigger  t_goal < t_snd   (acted before the evidence existed)
  miss           t_snd <= T < t_goal
  no_cue         neither time is finite within the horizon

Ties (t_goal == t_snd) are successes. All aggregate rates use the full trial
count as denominator.
"""

import math
import os
from dataclasses import dataclass, replace

from .errors import ConfigError, DataError
from .policy import MODES, derive_seed, execute, run_episode
from .timebase import TimingConfig
from .traces import EpisodeTrace, save_trace

import numpy as np

LOW_MOTION_THRESHOLD = 0.002  # meters per cycle, commanded planar motion

VERDICTS = ("success", "false_trigger", "miss", "no_cue")


@dataclass(frozen=True)
class Outcome:
    verdict: str
    t_snd: float
    t_goal: float


def judge(trace: EpisodeTrace) -> Outcome:
    try:
        onsets = [r["t"] for r in trace.events if r["kind"] == "cue_onset"]
        goals = [r["t"] for r in trace.events if r["kind"] == "goal"]
        horizon = trace.timing.T
    except (KeyError, TypeError, AttributeError) as exc:
        raise DataError(f"malformed trace: {exc}") from exc
    t_snd = float(min(onsets)) if onsets else math.inf
    t_goal = float(min(goals)) if goals else math.inf
    if t_goal < t_snd:
        verdict = "false_trigger"
    elif t_snd <= t_goal <= horizon:
        verdict = "success"
    elif t_snd <= horizon < t_goal:
        verdict = "miss"
    else:
        verdict = "no_cue"
    return Outcome(verdict, t_snd, t_goal)


def commanded_positions(trace: EpisodeTrace) -> np.ndarray:
    """Replay the execution wrapper over the logged chunks: the command sent
    at every executed cycle, shape (final_t, d)."""
    cmds = []
    for row in trace.decisions:
        chunk = np.asarray(row["chunk"], dtype=np.float64)
        rows, offset = execute(chunk, trace.mode, trace.timing.H_exec)
        n_exec = min(offset, trace.final_t - row["t_k"])
        for i in range(n_exec):
            cmds.append(rows[min(i, len(rows) - 1)])
    if not cmds:
        return np.zeros((0, 0))
    return np.stack(cmds)


def _planar(cmds: np.ndarray) -> np.ndarray:
    cols = [0, 1] if cmds.shape[1] == 3 else [0, 1, 3, 4]
    return cmds[:, cols]


def low_motion_ratio(trace: EpisodeTrace, threshold: float = LOW_MOTION_THRESHOLD,
                     upto: float | None = None) -> float:
    """Fraction of executed cycles whose commanded planar displacement stays
    under the threshold. `upto` restricts to cycles before that time (used to
    isolate the pre-cue waiting phase)."""
    cmds = commanded_positions(trace)
    if len(cmds) < 2:
        raise DataError("low-motion diagnostic needs at least two commands")
    p = _planar(cmds)
    disp = np.linalg.norm(np.diff(p, axis=0), axis=1)
    if upto is not None:
        disp = disp[: max(0, min(len(disp), int(upto) - 1))]
        if disp.size == 0:
            raise DataError("no commanded steps before the requested cutoff")
    return float(np.mean(disp < threshold))


@dataclass
class MetricsReport:
    task: str
    policy: str
    mode: str
    trials: int
    sr: float
    ft_rate: float
    md_rate: float
    no_cue_rate: float
    low_motion: float
    rows: list


def fmt(x) -> str:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return f"{x:.6g}"
    return str(x)


def run_eval(policy, task: str, trials: int, cfg: TimingConfig, seed: int,
             mode: str = "full", trace_dir=None) -> MetricsReport:
    """Judge `trials` independently seeded episodes and aggregate. Per-trial
    seeds are hashed from (seed, trial), so trial order never matters."""
    if trials < 1:
        raise ConfigError("need at least one trial")
    rows = []
    counts = dict.fromkeys(VERDICTS, 0)
    lm_sum = 0.0
    for trial in range(trials):
        trial_seed = derive_seed("trial", seed, trial)
        trace = run_episode(policy, task, trial_seed, cfg, mode)
        out = judge(trace)
        trace.outcome = out.verdict
        lm = low_motion_ratio(trace)
        if trace_dir is not None:
            save_trace(trace, os.path.join(trace_dir, f"trial_{trial:04d}"))
        counts[out.verdict] += 1
        lm_sum += lm
        rows.append({
            "trial": trial, "seed": trial_seed, "verdict": out.verdict,
            "t_snd": out.t_snd, "t_goal": out.t_goal, "final_t": trace.final_t,
            "low_motion": lm,
        })
    name = policy if isinstance(policy, str) else policy.cfg.kind
    return MetricsReport(
        task=task, policy=name, mode=mode, trials=trials,
        sr=counts["success"] / trials, ft_rate=counts["false_trigger"] / trials,
        md_rate=counts["miss"] / trials, no_cue_rate=counts["no_cue"] / trials,
        low_motion=lm_sum / trials, rows=rows)


EVAL_COLUMNS = ("kind", "trial", "seed", "task", "policy", "mode", "verdict",
                "t_snd", "t_goal", "final_t", "low_motion",
                "sr", "ft_rate", "md_rate", "no_cue_rate")


def eval_csv(report: MetricsReport) -> str:
    lines = [",".join(EVAL_COLUMNS)]
    for r in report.rows:
        lines.append(",".join([
            "trial", str(r["trial"]), str(r["seed"]), report.task, report.policy,
            report.mode, r["verdict"], fmt(r["t_snd"]), fmt(r["t_goal"]),
            str(r["final_t"]), fmt(r["low_motion"]), "", "", "", ""]))
    lines.append(",".join([
        "summary", str(report.trials), "", report.task, report.policy, report.mode,
        "", "", "", "", fmt(report.low_motion), fmt(report.sr), fmt(report.ft_rate),
        fmt(report.md_rate), fmt(report.no_cue_rate)]))
    return "\n".join(lines) + "\n"


SWEEP_PARAMS = ("h_exec", "t_win", "mode")


def sweep_cell(policy, task: str, param: str, value, trials: int,
               cfg: TimingConfig, seed: int, mode: str = "full") -> MetricsReport:
    """One sweep cell: same trial seeds across values, so cells are paired."""
    if param == "h_exec":
        cell_cfg, cell_mode = replace(cfg, H_exec=int(value)), mode
    elif param == "t_win":
        cell_cfg, cell_mode = replace(cfg, T_win=float(value)), mode
    elif param == "mode":
        if value not in MODES:
            raise ConfigError(f"unknown execution mode: {value}")
        cell_cfg, cell_mode = cfg, str(value)
    else:
        raise ConfigError(f"unknown sweep parameter: {param} (one of {SWEEP_PARAMS})")
    return run_eval(policy, task, trials, cell_cfg, seed, mode=cell_mode)


def sweep(policy, task: str, param: str, values: list, trials: int,
          cfg: TimingConfig, seed: int, mode: str = "full") -> list[MetricsReport]:
    return [sweep_cell(policy, task, param, v, trials, cfg, seed, mode) for v in values]


SWEEP_COLUMNS = ("param", "value", "task", "policy", "trials",
                 "sr", "ft_rate", "md_rate", "no_cue_rate", "low_motion")


def sweep_csv(param: str, values: list, reports: list) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for v, rep in zip(values, reports):
        lines.append(",".join([
            param, fmt(v) if isinstance(v, float) else str(v), rep.task, rep.policy,
            str(rep.trials), fmt(rep.sr), fmt(rep.ft_rate), fmt(rep.md_rate),
            fmt(rep.no_cue_rate), fmt(rep.low_motion)]))
    return "\n".join(lines) + "\n"
