"""Command-line front end: demo generation, training, evaluation, sweeps,
gradient audits, and trace inspection.

Exit codes: 0 ok, 1 usage, 2 config, 3 data/I-O, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .config import load_config
from .errors import ConfigError, ContractError, DataError, NumericError
from .evaluate import eval_csv, fmt, judge, run_eval, sweep, sweep_csv
from .policy import (
    MODES,
    Policy,
    build_dataset,
    derive_seed,
    gradient_report,
    load_policy,
    run_episode,
    save_policy,
    train,
)
from .timebase import TimingConfig
from .traces import load_trace, save_trace

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

GRAD_TOL = 1e-4

CURVE_COLUMNS = ("step", "lr", "loss_total", "loss_flow", "loss_stage",
                 "loss_adv", "w_text", "w_adv")


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_gen_demos(args) -> int:
    cfg = _apply_overrides(TimingConfig(), args)
    os.makedirs(args.out, exist_ok=True)
    ok = 0
    for e in range(args.episodes):
        ep_seed = derive_seed("demo", args.seed, e)
        tr = run_episode("oracle", args.task, ep_seed, cfg, stop_at_goal=False)
        tr.outcome = judge(tr).verdict
        ok += tr.outcome == "success"
        save_trace(tr, os.path.join(args.out, f"ep_{e:04d}"))
    print(f"gen-demos: {args.episodes} {args.task} traces -> {args.out} "
          f"({ok} judged success)")
    return EXIT_OK


def _load_demo_traces(root: str, task: str) -> list:
    if not os.path.isdir(root):
        raise DataError(f"demo directory not found: {root}")
    names = sorted(n for n in os.listdir(root)
                   if os.path.isfile(os.path.join(root, n, "meta.json")))
    if not names:
        raise DataError(f"no traces under {root}")
    traces = []
    for name in names:
        tr = load_trace(os.path.join(root, name))
        if tr.task != task:
            raise DataError(f"trace {name} is for task {tr.task!r}, config says {task!r}")
        traces.append(tr)
    return traces


def cmd_train(args) -> int:
    rc = load_config(args.config)
    traces = _load_demo_traces(rc.demos, rc.task)
    samples = build_dataset(traces, rc.timing)
    policy = Policy(rc.policy, rc.timing, seed=rc.policy_seed)
    curve = train(samples, policy, rc.trainer, seed=rc.train_seed)
    save_policy(policy, args.out)
    lines = [",".join(CURVE_COLUMNS)]
    for row in curve:
        lines.append(",".join(fmt(row[c]) for c in CURVE_COLUMNS))
    _write_text(args.out + ".curve.csv", "\n".join(lines) + "\n")
    first, last = curve[0], curve[-1]
    print(f"train: {rc.policy.kind} on {rc.task}, {len(samples)} samples, "
          f"{rc.trainer.steps} steps; loss_flow {fmt(first['loss_flow'])} -> "
          f"{fmt(last['loss_flow'])}; checkpoint {args.out}")
    return EXIT_OK


def _policy_and_timing(checkpoint: str, task: str | None):
    if checkpoint == "oracle":
        if task is None:
            raise ConfigError("--task is required with the oracle policy")
        return "oracle", task, TimingConfig()
    policy = load_policy(checkpoint)
    if task is None:
        task = policy.cfg.task
    return policy, task, policy.timing


def _apply_overrides(cfg: TimingConfig, args) -> TimingConfig:
    kw = {}
    if getattr(args, "horizon", None) is not None:
        kw["T"] = args.horizon
    if getattr(args, "h_exec", None) is not None:
        kw["H_exec"] = args.h_exec
    if getattr(args, "t_win", None) is not None:
        kw["T_win"] = args.t_win
    if not kw:
        return cfg
    return replace(cfg, **kw)


def cmd_eval(args) -> int:
    policy, task, cfg = _policy_and_timing(args.checkpoint, args.task)
    cfg = _apply_overrides(cfg, args)
    rep = run_eval(policy, task, args.trials, cfg, args.seed, mode=args.mode,
                   trace_dir=args.trace_dir)
    _write_text(args.out, eval_csv(rep))
    if args.out is not None:
        print(f"eval: {rep.policy} on {task}, {args.trials} trials, "
              f"sr={fmt(rep.sr)} ft={fmt(rep.ft_rate)} md={fmt(rep.md_rate)} "
              f"-> {args.out}")
    return EXIT_OK


def _parse_values(param: str, raw: str) -> list:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ConfigError("sweep needs at least one value")
    try:
        if param == "h_exec":
            return [int(s) for s in items]
        if param == "t_win":
            return [float(s) for s in items]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value for {param}: {exc}") from exc
    return items


def cmd_sweep(args) -> int:
    policy, task, cfg = _policy_and_timing(args.checkpoint, args.task)
    cfg = _apply_overrides(cfg, args)
    values = _parse_values(args.param, args.values)
    reports = sweep(policy, task, args.param, values, args.trials, cfg,
                    args.seed, mode=args.mode)
    _write_text(args.out, sweep_csv(args.param, values, reports))
    if args.out is not None:
        cells = " ".join(f"{v}:{fmt(r.sr)}" for v, r in zip(values, reports))
        print(f"sweep: {args.param} on {task} -> {args.out} ({cells})")
    return EXIT_OK


def cmd_check_grad(args) -> int:
    report = gradient_report(kind=args.kind, task=args.task, seed=args.seed,
                             realizer=args.realizer)
    worst = 0.0
    for head in sorted(report):
        err = report[head]
        worst = max(worst, err)
        print(f"{head:12s} max rel err {err:.3e}")
    if worst >= GRAD_TOL:
        print(f"FAIL: worst {worst:.3e} >= {GRAD_TOL:g}")
        return EXIT_NUMERIC
    print(f"ok: worst {worst:.3e} < {GRAD_TOL:g}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    tr = load_trace(args.trace)
    f_c = tr.timing.f_c
    print(f"trace: task={tr.task} seed={tr.seed} policy={tr.policy} "
          f"mode={tr.mode} outcome={tr.outcome or '?'}")
    print(f"clock: f_c={f_c} f_s={tr.timing.f_s} tau_sys={tr.timing.tau_sys} "
          f"T={tr.timing.T} H={tr.timing.H} H_exec={tr.timing.H_exec} "
          f"T_win={fmt(tr.timing.T_win)} L={tr.timing.L}")
    print(f"stopped at t={tr.final_t} ({tr.final_t / f_c:.2f} s); "
          f"t_snd={fmt(tr.t_snd)} t_goal={fmt(tr.t_goal)}")
    print("events:")
    if not tr.events:
        print("  (none)")
    for ev in tr.events:
        print(f"  t={ev['t']:>5d} {ev['t'] / f_c:7.2f}s  {ev['kind']:<9s} {ev['name']}")
    stages = [d["stage"] for d in tr.decisions]
    path = [str(stages[0])] if stages else []
    for s in stages[1:]:
        if str(s) != path[-1]:
            path.append(str(s))
    print(f"decisions: {len(tr.decisions)}, stage path {'->'.join(path) or '-'}")
    audio = np.asarray(tr.audio)
    peak = float(np.max(np.abs(audio))) if audio.size else 0.0
    print(f"audio: {audio.size} samples ({audio.size / tr.timing.f_s:.2f} s), "
          f"peak {peak:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="earshot",
        description="Sound-causal co-simulation: demos, training, evaluation.")
    sub = p.add_subparsers(dest="cmd")

    g = sub.add_parser("gen-demos", help="write oracle demonstration traces")
    g.add_argument("--task", required=True)
    g.add_argument("--episodes", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--horizon", type=int, default=None,
                   help="override episode length T (cycles)")
    g.add_argument("--h-exec", dest="h_exec", type=int, default=None,
                   help="demo decision spacing (training schedule)")
    g.add_argument("--t-win", dest="t_win", type=float, default=None)
    g.set_defaults(fn=cmd_gen_demos)

    t = sub.add_parser("train", help="train a policy from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="judge seeded trials and write metrics CSV")
    e.add_argument("--checkpoint", required=True,
                   help="checkpoint path, or the literal 'oracle'")
    e.add_argument("--task", default=None)
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--mode", choices=MODES, default="full")
    e.add_argument("--h-exec", dest="h_exec", type=int, default=None)
    e.add_argument("--t-win", dest="t_win", type=float, default=None)
    e.add_argument("--horizon", type=int, default=None)
    e.add_argument("--out", default=None, help="CSV path (default stdout)")
    e.add_argument("--trace-dir", dest="trace_dir", default=None,
                   help="also dump one trace directory per trial")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="evaluate across one parameter axis")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task", default=None)
    s.add_argument("--param", required=True, choices=("h_exec", "t_win", "mode"))
    s.add_argument("--values", required=True, help="comma-separated cell values")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=MODES, default="full")
    s.add_argument("--horizon", type=int, default=None)
    s.add_argument("--out", default=None, help="CSV path (default stdout)")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("check-grad", help="central-difference gradient audit")
    c.add_argument("--kind", default="hear")
    c.add_argument("--task", default="microwave")
    c.add_argument("--realizer", default="cfm", choices=("cfm", "regression"))
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_check_grad)

    i = sub.add_parser("inspect", help="pretty-print a saved trace")
    i.add_argument("--trace", required=True)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems and 0 for --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if getattr(args, "fn", None) is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
