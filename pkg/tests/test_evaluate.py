import math

import numpy as np
import pytest

from earshot.errors import ConfigError, DataError
from earshot.evaluate import (EVAL_COLUMNS, LOW_MOTION_THRESHOLD, SWEEP_COLUMNS,
                              commanded_positions, eval_csv, fmt, judge,
                              low_motion_ratio, run_eval, sweep, sweep_cell,
                              sweep_csv)
from earshot.policy import Policy, PolicyConfig, derive_seed, run_episode
from earshot.timebase import TimingConfig
from earshot.traces import EpisodeTrace, load_trace

CFG = TimingConfig(T=450)


def stub_trace(events, T=100, task="microwave", mode="full", h_exec=32,
               final_t=None, decisions=()):
    timing = TimingConfig(T=T, H_exec=h_exec)
    return EpisodeTrace(
        task=task, seed=0, policy="oracle", timing=timing,
        final_t=T if final_t is None else final_t,
        t_snd=math.inf, t_goal=math.inf, mode=mode,
        events=list(events), decisions=list(decisions))


def cue(t):
    return {"t": t, "kind": "cue_onset", "name": "ding"}


def goal(t):
    return {"t": t, "kind": "goal", "name": "microwave"}


# ------------------------------------------------------------------ judge --

def scan_verdict(events, T):
    """Brute-force referee: walk the timeline one cycle at a time and let the
    first decisive instant classify the episode."""
    onsets = sorted(e["t"] for e in events if e["kind"] == "cue_onset")
    goals = sorted(e["t"] for e in events if e["kind"] == "goal")
    heard = False
    for t in range(T + 1):
        if onsets and onsets[0] == t:
            heard = True
        if goals and goals[0] == t:
            return "success" if heard else "false_trigger"
    if heard:
        return "miss"
    return "no_cue"


def test_judge_worked_examples():
    T = 100
    assert judge(stub_trace([cue(50), goal(80)], T)).verdict == "success"
    assert judge(stub_trace([cue(50), goal(40)], T)).verdict == "false_trigger"
    assert judge(stub_trace([goal(30)], T)).verdict == "false_trigger"
    assert judge(stub_trace([cue(50)], T)).verdict == "miss"
    assert judge(stub_trace([], T)).verdict == "no_cue"
    # the cue and the goal can land on the same cycle; that still counts
    out = judge(stub_trace([cue(60), goal(60)], T))
    assert out.verdict == "success"
    assert out.t_snd == 60.0 and out.t_goal == 60.0


def test_judge_matches_brute_force_scan():
    rng = np.random.default_rng(411)
    T = 120
    for _ in range(300):
        events = []
        if rng.random() < 0.7:
            events.append(cue(int(rng.integers(0, T + 1))))
        if rng.random() < 0.7:
            events.append(goal(int(rng.integers(0, T + 1))))
        if rng.random() < 0.3:  # a second, later cue must never matter
            events.append(cue(int(rng.integers(0, T + 1))))
        out = judge(stub_trace(events, T))
        assert out.verdict == scan_verdict(events, T)


def test_judge_uses_earliest_events():
    out = judge(stub_trace([cue(70), cue(30), goal(90), goal(50)], 100))
    assert out.t_snd == 30.0 and out.t_goal == 50.0
    assert out.verdict == "success"


def test_judge_infinite_times_reported():
    out = judge(stub_trace([], 100))
    assert math.isinf(out.t_snd) and math.isinf(out.t_goal)


def test_judge_agrees_with_episode_fields():
    trace = run_episode("oracle", "microwave", 3, CFG)
    out = judge(trace)
    assert out.t_snd == trace.t_snd
    assert out.t_goal == trace.t_goal
    assert out.verdict == "success"


def test_judge_rejects_malformed_events():
    with pytest.raises(DataError):
        judge(stub_trace([{"name": "ding"}], 100))
    with pytest.raises(DataError):
        judge(stub_trace([None], 100))


# ------------------------------------------------------------- low motion --

def decision(t_k, chunk):
    return {"k": t_k // len(chunk), "t_k": t_k, "qpos": None, "vision": None,
            "stage": 0, "chunk": np.asarray(chunk, dtype=np.float64)}


def planar_chunk(xs):
    return [[x, 0.0, 0.5] for x in xs]


def test_commanded_positions_replays_execution_mode():
    ch = planar_chunk([0.0, 0.1, 0.2, 0.3])
    tr = stub_trace([], T=50, h_exec=4, final_t=4,
                    decisions=[decision(0, ch)], mode="first_hold")
    cmds = commanded_positions(tr)
    assert cmds.shape == (4, 3)
    assert np.all(cmds == cmds[0])  # row 0 held, the rest of the plan ignored


def test_commanded_positions_truncates_at_final_t():
    ch = planar_chunk([0.0, 0.1, 0.2, 0.3])
    tr = stub_trace([], T=50, h_exec=4, final_t=6,
                    decisions=[decision(0, ch), decision(4, ch)])
    assert commanded_positions(tr).shape == (6, 3)


def test_low_motion_all_hold_is_one():
    ch = planar_chunk([0.25] * 4)
    tr = stub_trace([], T=50, h_exec=4, final_t=8,
                    decisions=[decision(0, ch), decision(4, ch)])
    assert low_motion_ratio(tr) == 1.0


def test_low_motion_hand_computed_ratio():
    # planar x walk: 0, 1mm, 2mm, 6mm | 6mm, 6mm, 10mm, 10mm
    c1 = planar_chunk([0.0, 0.001, 0.002, 0.006])
    c2 = planar_chunk([0.006, 0.006, 0.010, 0.010])
    tr = stub_trace([], T=50, h_exec=4, final_t=8,
                    decisions=[decision(0, c1), decision(4, c2)])
    # diffs: 1, 1, 4, 0, 0, 4, 0 (mm); 5 of 7 under the 2mm threshold
    assert low_motion_ratio(tr) == pytest.approx(5 / 7)
    # restricting to the first 4 cycles keeps diffs 1, 1, 4
    assert low_motion_ratio(tr, upto=4) == pytest.approx(2 / 3)


def test_low_motion_all_moving_is_zero():
    ch = planar_chunk([0.00, 0.01, 0.02, 0.03])
    tr = stub_trace([], T=50, h_exec=4, final_t=4, decisions=[decision(0, ch)])
    assert low_motion_ratio(tr) == 0.0


def test_low_motion_ignores_nonplanar_axes():
    # 6-dof arm: columns 0,1,3,4 are planar; pump the others hard
    ch = [[0.0, 0.0, 0.1 * i, 0.0, 0.0, -0.1 * i] for i in range(4)]
    tr = stub_trace([], T=50, task="pour_water", h_exec=4, final_t=4,
                    decisions=[decision(0, ch)])
    assert low_motion_ratio(tr) == 1.0


def test_low_motion_needs_two_commands():
    ch = planar_chunk([0.0, 0.1, 0.2, 0.3])
    tr = stub_trace([], T=50, h_exec=4, final_t=1, decisions=[decision(0, ch)])
    with pytest.raises(DataError):
        low_motion_ratio(tr)
    tr2 = stub_trace([], T=50, h_exec=4, final_t=4, decisions=[decision(0, ch)])
    with pytest.raises(DataError):
        low_motion_ratio(tr2, upto=1)


def test_low_motion_threshold_is_strict():
    # steps of 1mm, exactly 2mm, 4mm: only the first is low motion
    ch = planar_chunk([0.0, 0.001, 0.001 + LOW_MOTION_THRESHOLD,
                       0.001 + 3 * LOW_MOTION_THRESHOLD])
    tr = stub_trace([], T=50, h_exec=4, final_t=4, decisions=[decision(0, ch)])
    assert low_motion_ratio(tr) == pytest.approx(1 / 3)


# --------------------------------------------------------------- run_eval --

def test_oracle_eval_all_success(tmp_path):
    rep = run_eval("oracle", "microwave", 4, CFG, seed=9, trace_dir=str(tmp_path))
    assert (rep.sr, rep.ft_rate, rep.md_rate, rep.no_cue_rate) == (1.0, 0.0, 0.0, 0.0)
    assert len(rep.rows) == 4
    for i, row in enumerate(rep.rows):
        assert row["verdict"] == "success"
        assert row["seed"] == derive_seed("trial", 9, i)
        assert row["t_snd"] <= row["t_goal"] <= CFG.T
    saved = load_trace(str(tmp_path / "trial_0002"))
    assert saved.outcome == "success"
    assert saved.seed == rep.rows[2]["seed"]


def test_eval_rejects_zero_trials():
    with pytest.raises(ConfigError):
        run_eval("oracle", "microwave", 0, CFG, seed=0)


def hold_still_policy():
    pol = Policy(PolicyConfig(kind="vision_only", task="microwave"), CFG, seed=0)
    H = CFG.H

    def freeze(obs, memory, rng):
        q = np.asarray(obs["qpos"], dtype=np.float64)
        return np.tile(q, (H, 1)), 0

    pol.decide = freeze
    return pol


def test_frozen_policy_misses_every_trial():
    rep = run_eval(hold_still_policy(), "microwave", 3, CFG, seed=4)
    assert rep.md_rate == 1.0
    assert rep.sr == 0.0 and rep.ft_rate == 0.0
    assert rep.policy == "vision_only"
    # parked at home, nearly every commanded step is sub-threshold
    assert rep.low_motion > 0.9
    for row in rep.rows:
        assert math.isinf(row["t_goal"]) and row["final_t"] == CFG.T


def test_eval_csv_layout_and_determinism():
    rep = run_eval("oracle", "microwave", 3, CFG, seed=9)
    text = eval_csv(rep)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(EVAL_COLUMNS)
    assert len(lines) == 1 + 3 + 1
    assert all(l.startswith("trial,") for l in lines[1:4])
    assert lines[-1].startswith("summary,3,")
    assert lines[-1].endswith(",1,0,0,0")
    rep2 = run_eval("oracle", "microwave", 3, CFG, seed=9)
    assert eval_csv(rep2) == text


def test_eval_csv_spells_out_infinities():
    rep = run_eval(hold_still_policy(), "microwave", 1, CFG, seed=4)
    row = eval_csv(rep).strip().split("\n")[1].split(",")
    assert row[EVAL_COLUMNS.index("t_goal")] == "inf"


# ------------------------------------------------------------------ sweep --

def test_sweep_pairs_trials_across_cells():
    reps = sweep("oracle", "microwave", "h_exec", [16, 32], 2, CFG, seed=7)
    assert len(reps) == 2
    for a, b in zip(reps[0].rows, reps[1].rows):
        assert a["seed"] == b["seed"]
    # the oracle re-plans at every decision, so both horizons succeed
    assert reps[0].sr == reps[1].sr == 1.0


def test_sweep_t_win_cells_leave_oracle_unchanged():
    reps = sweep("oracle", "microwave", "t_win", [0.5, 4.0], 2, CFG, seed=7)
    assert [r.sr for r in reps] == [1.0, 1.0]


def test_sweep_mode_values_are_validated():
    with pytest.raises(ConfigError):
        sweep_cell("oracle", "microwave", "mode", "thirds", 1, CFG, seed=0)
    with pytest.raises(ConfigError):
        sweep_cell("oracle", "microwave", "horizon", 8, 1, CFG, seed=0)


def test_sweep_csv_one_line_per_cell():
    reps = sweep("oracle", "microwave", "h_exec", [16, 32], 2, CFG, seed=7)
    lines = sweep_csv("h_exec", [16, 32], reps).strip().split("\n")
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 3
    assert lines[1].startswith("h_exec,16,microwave,oracle,2,1,")
    assert lines[2].startswith("h_exec,32,microwave,oracle,2,1,")


# -------------------------------------------------------------------- fmt --

def test_fmt():
    assert fmt(math.inf) == "inf"
    assert fmt(0.5) == "0.5"
    assert fmt(1 / 3) == "0.333333"
    assert fmt(3) == "3"
    assert fmt("half") == "half"
