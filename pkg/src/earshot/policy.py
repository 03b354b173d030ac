"""Policy assembly, execution wrappers, demo datasets, and joint training.

Five interface-restricted policy kinds share one trunk architecture:

  oracle               scripted expert, privileged world access, no networks
  vision_only          audio stream zeroed; sees vision/instruction/qpos only
  memoryless_waveform  amplitude envelope of the current window, no memory
  transcript_only      lexical token counts of finished utterances, no memory
  hear                 pooled window features plus recurrent packet memory

The restriction lives in observation assembly: a kind that may not read a
stream never touches it, so mutating that stream cannot change its output.
"""

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .advancer import Advancer, code_loss, f_max, future_target, pad_codes
from .audiostream import augment, packets_between
from .envisioner import (
    CTX_DIM,
    U_DIM,
    Z_DIM,
    Envisioner,
    EnvisionerDims,
    envelope_features,
    normalize_envelope,
    pooled_window_features,
    stage_loss,
)
from .errors import ConfigError, DataError, NumericError
from .historizer import DB_FLOOR, Historizer, HistorizerConfig, frontend
from .learnkit import (
    AdamState,
    OptimConfig,
    ParameterSet,
    grad_check,
    load_checkpoint,
    optim_step,
    save_checkpoint,
)
from .realizer import ChunkNorm, FlowField, RegressionHead, cfm_loss
from .realizer import sample as flow_sample
from .timebase import DecisionSchedule, TimingConfig, delayed_index, sample_index, window_bounds
from .traces import EpisodeTrace, from_episode, load_trace
from .world import (
    INSTRUCTION_DIM,
    TASK_NAMES,
    TRANSCRIPT_DIM,
    TRANSCRIPT_VOCAB,
    VISION_DIM,
    expert_chunk,
    observe,
    prime_ring,
    reset,
    step,
    task_logic,
)

KINDS = ("oracle", "vision_only", "memoryless_waveform", "transcript_only", "hear")
MODES = ("full", "half", "first_hold")
POOLED_DIM = 16
ENVELOPE_BINS = 256


def derive_seed(*parts) -> int:
    """Order-independent trial seeding: hash the labeled parts, take 8 bytes.

    Used everywhere a sub-stream is split off a base seed so that trials and
    stream roles never alias each other.
    """
    blob = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "hear"
    task: str = "microwave"
    historizer: str = "sst_lite"  # hear only: sst_lite | gru | ema
    use_advancer: bool = True     # hear only: future-code auxiliary loss
    realizer: str = "cfm"         # cfm | regression


def audio_feature_dim(kind: str) -> int:
    if kind in ("hear", "vision_only"):
        return POOLED_DIM
    if kind == "memoryless_waveform":
        return ENVELOPE_BINS
    if kind == "transcript_only":
        return TRANSCRIPT_DIM
    raise ConfigError(f"unknown policy kind: {kind}")


class Policy:
    """A trainable policy: parameter set, modules, and chunk normalization."""

    def __init__(self, cfg: PolicyConfig, timing: TimingConfig, seed: int = 0) -> None:
        if cfg.kind not in KINDS or cfg.kind == "oracle":
            raise ConfigError(f"not a trainable policy kind: {cfg.kind}")
        if cfg.task not in TASK_NAMES:
            raise ConfigError(f"unknown task: {cfg.task}")
        if cfg.realizer not in ("cfm", "regression"):
            raise ConfigError(f"unknown realizer: {cfg.realizer}")
        self.cfg = cfg
        self.timing = timing
        logic = task_logic(cfg.task)
        self.d_qpos = logic.d_qpos
        self.n_stages = len(logic.stages)
        self.chunk_dim = timing.H * self.d_qpos
        self.ps = ParameterSet()
        rng = np.random.default_rng(
            derive_seed("init", seed, cfg.kind, cfg.task, cfg.historizer, cfg.realizer))

        self.historizer = None
        mem_dim = 0
        if cfg.kind == "hear":
            self.historizer = Historizer(HistorizerConfig(cfg.historizer), self.ps, rng)
            mem_dim = HistorizerConfig(cfg.historizer).readout_dim
        self.mem_dim = mem_dim

        dims = EnvisionerDims(
            vision=VISION_DIM, audio=audio_feature_dim(cfg.kind),
            instruction=INSTRUCTION_DIM, memory=mem_dim, qpos=self.d_qpos,
            n_stages=self.n_stages)
        self.envisioner = Envisioner(self.ps, rng, dims)

        if cfg.realizer == "cfm":
            self.field = FlowField(self.ps, rng, self.chunk_dim, U_DIM)
            self.regressor = None
        else:
            self.field = None
            self.regressor = RegressionHead(self.ps, rng, self.chunk_dim, U_DIM)

        self.advancer = None
        if cfg.kind == "hear" and cfg.use_advancer:
            sched = DecisionSchedule.default(timing)
            self.advancer = Advancer(self.ps, rng, 64, f_max(sched, timing))

        self.norm: ChunkNorm | None = None
        self.last_z: np.ndarray | None = None

    def memory_zero(self) -> np.ndarray:
        if self.historizer is None:
            return np.zeros(1, dtype=np.float32)
        return self.historizer.readout(self.historizer.zero_state())

    def audio_features(self, obs: dict) -> np.ndarray:
        """Stream selection is the interface restriction: forbidden streams
        are never read, not merely ignored."""
        kind = self.cfg.kind
        if kind == "vision_only":
            return np.zeros(POOLED_DIM)
        if kind == "memoryless_waveform":
            return normalize_envelope(envelope_features(obs["window"], ENVELOPE_BINS))
        if kind == "transcript_only":
            return np.asarray(obs["transcript"], dtype=np.float64)
        return pooled_window_features(obs["window"], self.timing.f_s, self.timing.L)

    def decide(self, obs: dict, memory: np.ndarray,
               rng: np.random.Generator) -> tuple[np.ndarray, int]:
        af = self.audio_features(obs).astype(np.float32)
        mem = memory if self.mem_dim else np.zeros(1, dtype=np.float32)
        z, _, stage_logits, u = self.envisioner.encode(
            np.asarray(obs["vision"], dtype=np.float32)[None],
            af[None],
            np.asarray(obs["instruction"], dtype=np.float32)[None],
            np.asarray(mem, dtype=np.float32)[None],
            np.asarray(obs["qpos"], dtype=np.float32)[None])
        if self.field is not None:
            x = flow_sample(self.field, u, rng)[0]
        else:
            x = self.regressor.predict(u)[0]
        if self.norm is not None:
            x = self.norm.denormalize(x)
        if not np.all(np.isfinite(x)):
            raise NumericError("policy produced a non-finite action chunk")
        chunk = np.clip(np.asarray(x, dtype=np.float64).reshape(self.timing.H, self.d_qpos),
                        -1.0, 1.0)
        self.last_z = z[0]
        return chunk, int(np.argmax(stage_logits[0]))


def execute(chunk: np.ndarray, mode: str, h_exec: int) -> tuple[np.ndarray, int]:
    """Commitment wrapper: which commands fill the blind interval, and when
    the next decision is due.

      full        min(H, h_exec) planned rows, last row held if h_exec > H
      half        first ceil(H/2) rows, then re-query immediately
      first_hold  row 0 held for all H cycles
    """
    h_rows = chunk.shape[0]
    if mode == "full":
        cmds = chunk[: min(h_rows, h_exec)]
        if h_exec > h_rows:
            cmds = np.concatenate([cmds, np.repeat(chunk[-1:], h_exec - h_rows, axis=0)])
        return cmds, h_exec
    if mode == "half":
        n = (h_rows + 1) // 2
        return chunk[:n], n
    if mode == "first_hold":
        return np.repeat(chunk[:1], h_rows, axis=0), h_rows
    raise ConfigError(f"unknown execution mode: {mode}")


def run_episode(policy, task: str, seed: int, cfg: TimingConfig, mode: str = "full",
                stop_at_goal: bool = True) -> EpisodeTrace:
    """Roll one seeded episode: decide at scheduled cycles, execute blind
    between them. Evaluation runs stop at the first goal cycle; demo runs
    (stop_at_goal=False) always cover the full horizon."""
    oracle = isinstance(policy, str)
    if oracle:
        if policy != "oracle":
            raise ConfigError(f"unknown scripted policy: {policy}")
        name = "oracle"
        mode = "full"
    else:
        if policy.cfg.task != task:
            raise ConfigError(f"checkpoint is for {policy.cfg.task}, not {task}")
        if policy.timing.H != cfg.H:
            raise ConfigError("chunk length H differs between checkpoint and run config")
        if mode not in MODES:
            raise ConfigError(f"unknown execution mode: {mode}")
        name = policy.cfg.kind
    rng_obs = np.random.default_rng(derive_seed("obs", task, seed))
    rng_pol = np.random.default_rng(derive_seed("pol", task, seed))
    state, _ = reset(task, seed, cfg)
    ring = prime_ring(state, cfg)

    hear = not oracle and policy.historizer is not None
    if hear:
        h = policy.historizer.zero_state()
        carry = None
        prev_db = DB_FLOOR
        n_mem = -1
    mem = None if oracle else policy.memory_zero()

    decisions = []
    k = 0
    while not state.terminal and not (stop_at_goal and state.goal_cycle is not None):
        t_k = state.t
        obs = observe(state, ring, cfg, rng_obs)
        if oracle:
            chunk, stage = expert_chunk(state, cfg)
        else:
            if hear:
                n_now = sample_index(delayed_index(t_k, cfg), cfg)
                packets, carry = packets_between(ring, n_mem, n_now, carry, cfg)
                n_mem = n_now
                if packets.shape[0]:
                    feats = frontend(packets, cfg.f_s, prev_db)
                    prev_db = float(feats[-1, 0])
                    h = policy.historizer.update(h, feats)
                mem = policy.historizer.readout(h)
            chunk, stage = policy.decide(obs, mem, rng_pol)
        decisions.append({
            "k": k, "t_k": t_k, "qpos": obs["qpos"], "vision": obs["vision"],
            "stage": int(stage), "chunk": chunk,
        })
        cmds, offset = execute(chunk, mode, cfg.H_exec)
        for i in range(min(offset, cfg.T - t_k)):
            step(state, cmds[min(i, len(cmds) - 1)], ring, cfg)
            if stop_at_goal and state.goal_cycle is not None:
                break
        k += 1
    return from_episode(state, ring, cfg, decisions, name, seed, mode)


# ---------------------------------------------------------------- datasets --

@dataclass
class TrainSample:
    """One decision of one demo: observation streams, the audio-derived
    learning targets, and the expert chunk."""
    episode: int
    k: int
    vision: np.ndarray       # (VISION_DIM,)
    qpos: np.ndarray         # (d_qpos,)
    instruction: np.ndarray  # (INSTRUCTION_DIM,)
    pooled: np.ndarray       # (16,) window summary
    envelope: np.ndarray     # (256,) amplitude envelope
    transcript: np.ndarray   # (4,) token counts
    hist_feats: np.ndarray   # (P_k, 8) packet features of the update interval
    codes: np.ndarray        # (F_max,) future audio codes, -1 padded
    chunk: np.ndarray        # (H, d_qpos) expert target
    stage: int


def slice_window(audio: np.ndarray, t: int, cfg: TimingConfig) -> np.ndarray:
    """Array-side replica of the ring window read: the n_win samples visible
    at cycle t, zero-padded at the episode head."""
    n = sample_index(delayed_index(t, cfg), cfg)
    lo, hi = window_bounds(n, cfg)
    if hi > audio.size:
        raise DataError("audio does not cover the requested window")
    out = np.zeros(cfg.n_win, dtype=np.float64)
    seg = audio[max(lo, 0):hi]
    out[cfg.n_win - seg.size:] = seg
    return out


def transcript_from_events(events: list, upto_cycle: int) -> np.ndarray:
    """Same lexical counts the live world reports, recomputed from a trace
    event log (an utterance is counted once its cue_end row is in range)."""
    out = np.zeros(TRANSCRIPT_DIM)
    for row in events:
        if (row["kind"] == "cue_end" and row["name"] in TRANSCRIPT_VOCAB
                and row["t"] <= upto_cycle):
            out[TRANSCRIPT_VOCAB.index(row["name"])] += 1.0
            out[len(TRANSCRIPT_VOCAB)] = 1.0
    return out


def build_dataset(traces: list, cfg: TimingConfig) -> list[TrainSample]:
    """Per-decision training samples from full-horizon oracle traces.

    Audio is augmented once per episode (noise at a drawn SNR plus a drawn
    gain), then every derived stream (window features, packet features,
    future codes) is computed from the augmented waveform.
    """
    sched = DecisionSchedule.default(cfg)
    fmax = f_max(sched, cfg)
    samples: list[TrainSample] = []
    for e, tr in enumerate(traces):
        if not isinstance(tr, EpisodeTrace):
            tr = load_trace(tr)
        # T_win only affects feature extraction below, never the recorded
        # trajectory, so traces may be re-windowed across sweep cells
        if replace(tr.timing, T_win=cfg.T_win) != cfg:
            raise DataError(f"trace {e} timing differs from the dataset config")
        if tr.final_t != cfg.T:
            raise DataError(f"trace {e} stopped at t={tr.final_t}; demos must cover T={cfg.T}")
        got = [row["t_k"] for row in tr.decisions]
        if got != list(sched.cycles):
            raise DataError(f"trace {e} decisions do not follow the default schedule")
        rng_a = np.random.default_rng(derive_seed("augment", tr.task, tr.seed))
        audio = augment(tr.audio, rng_a)
        whole = audio[: (audio.size // cfg.L) * cfg.L].reshape(-1, cfg.L)
        all_feats = frontend(whole, cfg.f_s)  # one pass keeps the onset chain exact
        instr = np.asarray(tr.instruction, dtype=np.float64)
        for k, t_k in enumerate(sched.cycles):
            if t_k + cfg.H_exec > cfg.T:
                break  # the advancer target would spill past the horizon
            row = tr.decisions[k]
            n_k = sample_index(delayed_index(t_k, cfg), cfg)
            n_prev = sample_index(delayed_index(sched.cycles[k - 1], cfg), cfg) if k else -1
            win = slice_window(audio, t_k, cfg)
            samples.append(TrainSample(
                episode=e,
                k=k,
                vision=np.asarray(row["vision"], dtype=np.float64),
                qpos=np.asarray(row["qpos"], dtype=np.float64),
                instruction=instr,
                pooled=pooled_window_features(win, cfg.f_s, cfg.L),
                envelope=envelope_features(win, ENVELOPE_BINS),
                transcript=transcript_from_events(tr.events, delayed_index(t_k, cfg)),
                hist_feats=all_feats[(n_prev + 1) // cfg.L:(n_k + 1) // cfg.L],
                codes=pad_codes([future_target(audio, k, sched, cfg)], fmax)[0],
                chunk=np.asarray(row["chunk"], dtype=np.float64),
                stage=int(row["stage"]),
            ))
    if not samples:
        raise DataError("no training samples (empty trace list?)")
    return samples


# ---------------------------------------------------------------- training --

@dataclass
class TrainerConfig:
    steps: int = 1500
    batch: int = 64
    w_adv: float = 0.1
    w_text: float = 0.05
    aux_warmup: float = 0.2  # both auxiliary weights ramp 0 -> target here
    log_every: int = 50
    optim: OptimConfig = field(default_factory=OptimConfig)


class _Stacked:
    """Dataset rearranged for batched training."""

    def __init__(self, samples: list[TrainSample], policy: Policy):
        n = len(samples)
        self.n = n
        self.vision = np.stack([s.vision for s in samples]).astype(np.float32)
        self.qpos = np.stack([s.qpos for s in samples]).astype(np.float32)
        self.instr = np.stack([s.instruction for s in samples]).astype(np.float32)
        self.stages = np.array([s.stage for s in samples], dtype=np.int64)
        if np.any(self.stages >= policy.n_stages) or np.any(self.stages < 0):
            raise DataError("stage label outside the task's stage set")
        chunks = np.stack([s.chunk.reshape(-1) for s in samples]).astype(np.float32)
        if chunks.shape[1] != policy.chunk_dim:
            raise DataError("chunk shape in dataset disagrees with policy timing")
        if policy.norm is None:
            policy.norm = ChunkNorm.fit(chunks)
        self.x1 = policy.norm.normalize(chunks)

        kind = policy.cfg.kind
        if kind == "vision_only":
            self.audio = np.zeros((n, POOLED_DIM), dtype=np.float32)
        elif kind == "memoryless_waveform":
            self.audio = np.stack([normalize_envelope(s.envelope)
                                   for s in samples]).astype(np.float32)
        elif kind == "transcript_only":
            self.audio = np.stack([s.transcript for s in samples]).astype(np.float32)
        else:
            self.audio = np.stack([s.pooled for s in samples]).astype(np.float32)

        self.codes = None
        if policy.advancer is not None:
            self.codes = np.stack([s.codes for s in samples])
            if self.codes.shape[1] != policy.advancer.f_max:
                raise DataError("future-code padding disagrees with the advancer")

        # memory bookkeeping: per-(episode, k) segment features, uniform P_k
        self.k_of = np.array([s.k for s in samples], dtype=np.int64)
        self.feats_by_k = None
        if policy.historizer is not None:
            eps = sorted({s.episode for s in samples})
            e_index = {e: i for i, e in enumerate(eps)}
            self.e_of = np.array([e_index[s.episode] for s in samples], dtype=np.int64)
            self.n_eps = len(eps)
            ks = sorted({s.k for s in samples})
            if ks != list(range(len(ks))):
                raise DataError("decision indices must be contiguous from 0")
            self.n_k = len(ks)
            table: dict[tuple[int, int], np.ndarray] = {}
            self.row_of = np.full((self.n_eps, self.n_k), -1, dtype=np.int64)
            for row, s in enumerate(samples):
                table[(e_index[s.episode], s.k)] = s.hist_feats
                self.row_of[e_index[s.episode], s.k] = row
            if len(table) != self.n_eps * self.n_k or np.any(self.row_of < 0):
                raise DataError("memory training needs every (episode, k) cell")
            self.feats_by_k = []
            for k in range(self.n_k):
                segs = [table[(e, k)] for e in range(self.n_eps)]
                if len({seg.shape for seg in segs}) != 1:
                    raise DataError(f"packet count varies across episodes at k={k}")
                self.feats_by_k.append(np.stack(segs).astype(np.float64))


def _refresh_boundaries(policy: Policy, data: _Stacked) -> np.ndarray:
    """Teacher-forced memory: recompute every pre-segment state from the zero
    state with the current parameters. Gradients never cross these states."""
    hz = policy.historizer
    shape = (data.n_eps, data.n_k) + hz.cfg.state_shape()
    out = np.zeros(shape, dtype=np.float32)
    h = hz.zero_state(data.n_eps)
    for k in range(data.n_k):
        out[:, k] = h
        if data.feats_by_k[k].shape[1]:
            h, _ = hz.fold(h, data.feats_by_k[k])
    return out


def train(samples: list[TrainSample], policy: Policy, tc: TrainerConfig,
          seed: int = 0) -> list[dict]:
    """Joint objective: chunk loss + w_text-stage CE + w_adv-future-code CE,
    with both auxiliary weights ramping linearly to their targets over the
    first aux_warmup fraction of steps. Returns the logged loss curve."""
    if not samples:
        raise DataError("cannot train on an empty dataset")
    data = _Stacked(samples, policy)
    rng = np.random.default_rng(derive_seed("train", seed, policy.cfg.kind))
    oc = replace(tc.optim, total_steps=tc.steps)
    adam = AdamState.for_params(policy.ps)
    warm = max(1, round(tc.aux_warmup * tc.steps))
    steps_per_epoch = max(1, data.n // tc.batch)
    boundaries = None
    curve = []

    for it in range(tc.steps):
        if policy.historizer is not None and it % steps_per_epoch == 0:
            boundaries = _refresh_boundaries(policy, data)
        policy.ps.zero_grads()

        mem = np.zeros((tc.batch, max(policy.mem_dim, 1)), dtype=np.float32)
        caches = None
        if policy.historizer is not None:
            # one shared decision index per step so the fold stays one batched
            # call; cells remain uniformly sampled across steps
            k_it = int(rng.integers(data.n_k))
            eps = rng.choice(data.n_eps, size=tc.batch, replace=True)
            idx = data.row_of[eps, k_it]
            h0 = boundaries[eps, k_it]
            feats = data.feats_by_k[k_it][eps]
            if feats.shape[1]:
                h, caches = policy.historizer.fold(h0, feats)
            else:
                h = h0
            mem[:] = policy.historizer.readout(h)
        else:
            idx = rng.choice(data.n, size=tc.batch, replace=True)

        z, ctx, slog, u = policy.envisioner.encode(
            data.vision[idx], data.audio[idx], data.instr[idx], mem, data.qpos[idx])

        if policy.field is not None:
            loss_flow, du = cfm_loss(policy.field, u, data.x1[idx], rng)
        else:
            loss_flow, du = policy.regressor.loss(u, data.x1[idx])

        ramp = min(1.0, it / warm)
        w_text = tc.w_text * ramp
        w_adv = tc.w_adv * ramp
        loss_stage, dslog = stage_loss(slog, data.stages[idx], w_text)

        loss_adv = 0.0
        dz = np.zeros_like(z)
        if policy.advancer is not None:
            logits = policy.advancer.predict(z)
            loss_adv, dlogits = code_loss(logits, data.codes[idx])
            dz = policy.advancer.backward(dlogits * np.float32(w_adv))

        policy.envisioner.backward(dz, np.zeros_like(ctx), dslog, du)
        if policy.historizer is not None and caches is not None:
            dmem = policy.envisioner.memory_grad
            dh = dmem.reshape((tc.batch,) + policy.historizer.cfg.state_shape())
            policy.historizer.fold_back(dh, caches)

        total = loss_flow + w_text * loss_stage + w_adv * loss_adv
        if not math.isfinite(total):
            raise NumericError(f"training diverged at step {it}: loss={total}")
        lr = optim_step(policy.ps, adam, oc, it)

        if it % tc.log_every == 0 or it == tc.steps - 1:
            curve.append({
                "step": it, "lr": lr, "loss_total": total, "loss_flow": loss_flow,
                "loss_stage": loss_stage, "loss_adv": loss_adv,
                "w_text": w_text, "w_adv": w_adv,
            })
    return curve


def eval_advancer_loss(policy: Policy, samples: list[TrainSample]) -> float:
    """Mean future-code CE over a held-out sample list, no gradient intent."""
    if policy.advancer is None:
        raise ConfigError("policy has no advancer head")
    if policy.historizer is None:
        raise ConfigError("advancer evaluation needs the hear policy")
    data = _Stacked(samples, policy)
    boundaries = _refresh_boundaries(policy, data)
    total = 0.0
    for k in range(data.n_k):
        rows = np.nonzero(data.k_of == k)[0]
        h0 = boundaries[data.e_of[rows], k]
        feats = data.feats_by_k[k][data.e_of[rows]]
        h = policy.historizer.fold(h0, feats)[0] if feats.shape[1] else h0
        mem = policy.historizer.readout(h)
        z, _, _, _ = policy.envisioner.encode(
            data.vision[rows], data.audio[rows], data.instr[rows], mem, data.qpos[rows])
        loss, _ = code_loss(policy.advancer.predict(z), data.codes[rows])
        total += loss * rows.size
    return total / data.n


def gradient_report(kind: str = "hear", task: str = "microwave", seed: int = 0,
                    realizer: str = "cfm", max_coords: int = 60) -> dict[str, float]:
    """Central-difference audit of the full training objective on a synthetic
    batch. Returns max relative gradient error per module (parameter prefix).
    """
    timing = TimingConfig(T=120, H=8, H_exec=8)
    policy = Policy(PolicyConfig(kind=kind, task=task, realizer=realizer),
                    timing, seed=seed)
    rng = np.random.default_rng(derive_seed("gradcheck", seed, kind, task, realizer))
    # jitter all tensors so zero-initialized output layers carry signal too
    policy.ps.load({k: (v + rng.normal(scale=0.02, size=v.shape)).astype(np.float32)
                    for k, v in policy.ps.params.items()})

    batch = 4
    w_text, w_adv = 0.3, 0.3
    vision = rng.normal(size=(batch, VISION_DIM))
    audio = rng.normal(size=(batch, audio_feature_dim(kind)))
    instr = rng.normal(size=(batch, INSTRUCTION_DIM))
    qpos = rng.uniform(-1, 1, size=(batch, policy.d_qpos))
    x1 = rng.uniform(-1, 1, size=(batch, policy.chunk_dim))
    stages = rng.integers(policy.n_stages, size=batch)
    feats = rng.normal(size=(batch, 3, 8))
    codes = None
    if policy.advancer is not None:
        codes = rng.integers(0, 64, size=(batch, policy.advancer.f_max))
        codes[0, 2:] = -1  # exercise the padding mask
    # linear probes keep every parameter's gradient O(1); without them the
    # relative-error test is dominated by float noise on near-zero gradients
    r_z = rng.normal(size=(batch, Z_DIM))
    r_u = rng.normal(size=(batch, U_DIM))
    r_ctx = rng.normal(size=(batch, CTX_DIM))
    r_logits = (rng.normal(size=(batch, policy.advancer.f_max, 64))
                if policy.advancer is not None else None)

    def fn_all(params):
        policy.ps.load(dict(params))  # float64 copies; load zeroes grads
        mem = np.zeros((batch, max(policy.mem_dim, 1)))
        caches = None
        if policy.historizer is not None:
            # float64 state keeps the fold out of float32 rounding, which
            # would swamp the central differences
            h0 = policy.historizer.zero_state(batch=batch).astype(np.float64)
            h, caches = policy.historizer.fold(h0, feats)
            mem = policy.historizer.readout(h)
        z, ctx, slog, u = policy.envisioner.encode(vision, audio, instr, mem, qpos)
        if policy.field is not None:
            loss_flow, du = cfm_loss(policy.field, u, x1, np.random.default_rng(1234))
        else:
            loss_flow, du = policy.regressor.loss(u, x1)
        loss_stage, dslog = stage_loss(slog, stages, w_text)
        loss_adv, dz = 0.0, np.zeros_like(z)
        probe = float(np.sum(r_z * z) + np.sum(r_ctx * ctx) + np.sum(r_u * u))
        if policy.advancer is not None:
            logits = policy.advancer.predict(z)
            loss_adv, dlogits = code_loss(logits, codes)
            probe += float(np.sum(r_logits * logits))
            dz = policy.advancer.backward(dlogits * w_adv + r_logits)
        policy.envisioner.backward(dz + r_z, r_ctx, dslog, du + r_u)
        if caches is not None:
            dh = policy.envisioner.memory_grad.reshape(
                (batch,) + policy.historizer.cfg.state_shape())
            policy.historizer.fold_back(dh, caches)
        total = loss_flow + w_text * loss_stage + w_adv * loss_adv + probe
        return float(total), {k: np.asarray(g) for k, g in policy.ps.grads.items()}

    values = {k: np.asarray(v, dtype=np.float64) for k, v in policy.ps.params.items()}
    heads: dict[str, dict] = {}
    for name, v in values.items():
        heads.setdefault(name.split(".")[0], {})[name] = v

    report = {}
    for head, subset in sorted(heads.items()):
        def fn_head(p, _subset=subset):
            merged = dict(values)
            merged.update(p)
            loss, grads = fn_all(merged)
            return loss, {k: grads[k] for k in p}
        report[head] = grad_check(fn_head, subset, max_coords=max_coords, seed=seed)
    return report


# ------------------------------------------------------------- checkpoints --

def save_policy(policy: Policy, path) -> None:
    t = policy.timing
    header = {
        "kind": policy.cfg.kind,
        "task": policy.cfg.task,
        "historizer": policy.cfg.historizer,
        "use_advancer": policy.cfg.use_advancer,
        "realizer": policy.cfg.realizer,
        "timing": {"f_c": t.f_c, "f_s": t.f_s, "tau_sys": t.tau_sys, "T": t.T,
                   "H": t.H, "H_exec": t.H_exec, "T_win": t.T_win, "L": t.L},
        "norm_mean": None if policy.norm is None else policy.norm.mean.tolist(),
        "norm_std": None if policy.norm is None else policy.norm.std.tolist(),
    }
    save_checkpoint(path, policy.ps.params, header)


def load_policy(path) -> Policy:
    tensors, header = load_checkpoint(path)
    try:
        cfg = PolicyConfig(
            kind=header["kind"], task=header["task"], historizer=header["historizer"],
            use_advancer=header["use_advancer"], realizer=header["realizer"])
        timing = TimingConfig(**header["timing"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed policy checkpoint header: {exc}") from exc
    policy = Policy(cfg, timing)
    policy.ps.load(tensors)
    if header["norm_mean"] is not None:
        policy.norm = ChunkNorm(
            mean=np.asarray(header["norm_mean"], dtype=np.float32),
            std=np.asarray(header["norm_std"], dtype=np.float32))
    return policy
