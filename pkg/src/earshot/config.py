"""Run configuration: a strict JSON schema over the library dataclasses.

A run document has five blocks (timing, task, policy, trainer, eval), all
optional except task. Unknown keys and type mismatches are rejected with the
offending dotted path named, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .errors import ConfigError, DataError
from .learnkit import OptimConfig
from .policy import KINDS, MODES, PolicyConfig, TrainerConfig
from .timebase import TimingConfig
from .world import TASK_NAMES

_TIMING = {"f_c": int, "f_s": int, "tau_sys": int, "T": int, "H": int,
           "H_exec": int, "T_win": float, "L": int}
_TASK = {"name": str, "demos": str}
_POLICY = {"kind": str, "historizer": str, "use_advancer": bool,
           "realizer": str, "seed": int}
_TRAINER = {"steps": int, "batch": int, "w_adv": float, "w_text": float,
            "aux_warmup": float, "log_every": int, "seed": int, "optim": dict}
_OPTIM = {"peak_lr": float, "weight_decay": float, "clip_norm": float,
          "beta1": float, "beta2": float, "eps": float, "warmup_frac": float}
_EVAL = {"trials": int, "seed": int, "mode": str}

_BLOCKS = {"timing": _TIMING, "task": _TASK, "policy": _POLICY,
           "trainer": _TRAINER, "eval": _EVAL}


@dataclass(frozen=True)
class RunConfig:
    task: str
    demos: str
    timing: TimingConfig
    policy: PolicyConfig
    policy_seed: int
    trainer: TrainerConfig
    train_seed: int
    eval_trials: int
    eval_seed: int
    eval_mode: str


def _checked(block: str, doc: dict, schema: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"config block must be an object: {block}")
    out = {}
    for key, value in doc.items():
        if key not in schema:
            raise ConfigError(f"unknown config key: {block}.{key}")
        want = schema[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        # bool is an int subclass; never let it satisfy a numeric field
        if not isinstance(value, want) or (want is not bool and isinstance(value, bool)):
            raise ConfigError(
                f"wrong type for {block}.{key}: expected {want.__name__}")
        out[key] = value
    return out


def parse_config(doc) -> RunConfig:
    """Validate a parsed JSON document and assemble the run dataclasses."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    for key in doc:
        if key not in _BLOCKS:
            raise ConfigError(f"unknown config key: {key}")

    task = _checked("task", doc.get("task", {}), _TASK)
    for req in ("name", "demos"):
        if req not in task:
            raise ConfigError(f"missing config key: task.{req}")
    if task["name"] not in TASK_NAMES:
        raise ConfigError(f"unknown task: {task['name']}")

    timing = TimingConfig(**_checked("timing", doc.get("timing", {}), _TIMING))

    pol = _checked("policy", doc.get("policy", {}), _POLICY)
    policy_seed = pol.pop("seed", 0)
    if "kind" in pol and pol["kind"] not in KINDS:
        raise ConfigError(f"unknown policy kind: {pol['kind']}")
    policy = PolicyConfig(task=task["name"], **pol)

    tr = _checked("trainer", doc.get("trainer", {}), _TRAINER)
    train_seed = tr.pop("seed", 0)
    optim = OptimConfig(**_checked("trainer.optim", tr.pop("optim", {}), _OPTIM))
    trainer = TrainerConfig(optim=optim, **tr)

    ev = _checked("eval", doc.get("eval", {}), _EVAL)
    eval_mode = ev.get("mode", "full")
    if eval_mode not in MODES:
        raise ConfigError(f"unknown execution mode: {eval_mode}")

    return RunConfig(
        task=task["name"], demos=task["demos"], timing=timing,
        policy=policy, policy_seed=policy_seed,
        trainer=trainer, train_seed=train_seed,
        eval_trials=ev.get("trials", 100), eval_seed=ev.get("seed", 0),
        eval_mode=eval_mode)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def default_config_doc(task: str = "microwave", demos: str = "demos") -> dict:
    """A fully spelled-out document with every supported key at its default;
    the reference for what a run config may contain."""
    t = TimingConfig()
    tc = TrainerConfig()
    return {
        "timing": {"f_c": t.f_c, "f_s": t.f_s, "tau_sys": t.tau_sys, "T": t.T,
                   "H": t.H, "H_exec": t.H_exec, "T_win": t.T_win, "L": t.L},
        "task": {"name": task, "demos": demos},
        "policy": {"kind": "hear", "historizer": "sst_lite",
                   "use_advancer": True, "realizer": "cfm", "seed": 0},
        "trainer": {"steps": tc.steps, "batch": tc.batch, "w_adv": tc.w_adv,
                    "w_text": tc.w_text, "aux_warmup": tc.aux_warmup,
                    "log_every": tc.log_every, "seed": 0,
                    "optim": {"peak_lr": tc.optim.peak_lr,
                              "weight_decay": tc.optim.weight_decay,
                              "clip_norm": tc.optim.clip_norm,
                              "beta1": tc.optim.beta1, "beta2": tc.optim.beta2,
                              "eps": tc.optim.eps,
                              "warmup_frac": tc.optim.warmup_frac}},
        "eval": {"trials": 100, "seed": 0, "mode": "full"},
    }
