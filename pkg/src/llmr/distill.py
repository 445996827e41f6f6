"""Distillation trainers sharing one training loop.

Methods:

* ``SeqKD`` - cross-entropy on the teacher's beam-search output (also used
  as the pre-distillation stage);
* ``KL`` / ``RKL`` / ``JS`` - word-level divergences on sampled prefixes;
* ``LLMR`` - REINFORCE on the reward induced from the teacher's logits.

Every per-step operation returns an *ascent* direction so the loop can hand
it straight to :func:`sgd_update`; divergence gradients are therefore
returned negated.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ConfigurationError, NotTrainableError, NumericError
from .policy import (
    ParamGrad,
    TabularPolicy,
    TokenSequence,
    beam_search,
    greedy_decode,
    require_shared_vocab,
    sample_batch,
    sgd_update,
    start_contexts,
)
from .reward import RewardedTrajectory, path_rewards, suffix_sums

METHODS = ("SeqKD", "KL", "RKL", "JS", "LLMR")
DIVERGENCES = {"KL": kernels.KIND_KL, "RKL": kernels.KIND_RKL, "JS": kernels.KIND_JS}


@dataclass
class TrainConfig:
    method: str = "LLMR"
    steps: int = 1000
    batch_size: int = 16
    learning_rate: float = 0.1
    max_len: int = 16
    seed: int = 0
    baseline_enabled: bool = False
    baseline_window: int = 64
    beam_width: int = 4

    def validate(self) -> "TrainConfig":
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        for name in ("batch_size", "max_len", "beam_width", "baseline_window"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not (self.learning_rate >= 0 and np.isfinite(self.learning_rate)):
            raise ConfigurationError("learning_rate must be a finite non-negative real")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training options: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepRecord:
    step: int
    objective: float
    mean_reward: Optional[float]
    probe_kl: float


@dataclass
class TrainReport:
    config: TrainConfig
    records: List[StepRecord] = field(default_factory=list)
    student: Optional[TabularPolicy] = field(default=None, repr=False)

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def rewards(self) -> np.ndarray:
        return np.array([np.nan if r.mean_reward is None else r.mean_reward for r in self.records])

    def probe_kls(self) -> np.ndarray:
        return np.array([r.probe_kl for r in self.records])

    def to_jsonl(self, meta: Optional[dict] = None) -> str:
        lines = []
        for r in self.records:
            rec = {"method": self.config.method, **asdict(r), **(meta or {})}
            lines.append(json.dumps(rec, sort_keys=True, allow_nan=False))
        return "".join(line + "\n" for line in lines)


class ProbeSet:
    """Teacher-greedy states of held-out inputs, for per-step KL diagnostics."""

    def __init__(self, teacher: TabularPolicy, student: TabularPolicy,
                 inputs: Sequence[Sequence[int]], max_len: int):
        paths = [greedy_decode(teacher, c, max_len) for c in inputs]
        L = max((len(p) for p in paths), default=1)
        self.tokens = np.full((len(paths), L), -1, dtype=np.int64)
        for i, p in enumerate(paths):
            self.tokens[i, : len(p)] = p
        self.lengths = np.array([len(p) for p in paths], dtype=np.int64)
        radix = teacher.vocab.radix
        self.t_ctx = kernels.path_contexts(self.tokens, self.lengths, start_contexts(teacher, inputs),
                                           radix, teacher.n_ctx)
        self.s_ctx = kernels.path_contexts(self.tokens, self.lengths, start_contexts(student, inputs),
                                           radix, student.n_ctx)
        self.teacher = teacher
        self.count = int(self.lengths.sum())

    def kl(self, student: TabularPolicy) -> float:
        if self.count == 0:
            return 0.0
        kl = kernels.kl_positions(self.teacher.weights, student.weights, self.t_ctx, self.s_ctx, self.lengths)
        return float(kl.sum() / self.count)


def _check_pair(student: TabularPolicy, teacher: TabularPolicy) -> None:
    require_shared_vocab(student, teacher)
    if not student.trainable:
        raise NotTrainableError("the student must be trainable")


def _pad(seqs: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    L = max(len(s) for s in seqs)
    tokens = np.full((len(seqs), L), -1, dtype=np.int64)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = s
    return tokens, np.array([len(s) for s in seqs], dtype=np.int64)


def contexts_along(policy: TabularPolicy, conds, tokens, lengths) -> np.ndarray:
    return kernels.path_contexts(tokens, lengths, start_contexts(policy, conds), policy.vocab.radix, policy.n_ctx)


# SeqKD / pre-distillation

def seqkd_gradient(student: TabularPolicy, conds: Sequence[Sequence[int]],
                   targets: Sequence[Sequence[int]]) -> Tuple[ParamGrad, float]:
    """Batch-mean gradient of ``log q(target | cond)``; also returns the mean NLL."""
    tokens, lengths = _pad(targets)
    ctx = contexts_along(student, conds, tokens, lengths)
    coef = np.where(np.arange(tokens.shape[1])[None, :] < lengths[:, None], 1.0 / len(conds), 0.0)
    grad = ParamGrad.zeros_like(student)
    logp = kernels.logprob_grad(student.weights, ctx, tokens, lengths, coef, grad.values, grad.visited)
    return grad, float(-logp.mean())


# word-level f-divergences

def fdiv_batch(student: TabularPolicy, teacher: TabularPolicy, conds: Sequence[Sequence[int]],
               divergence: str, rng: np.random.Generator, max_len: int) -> Tuple[ParamGrad, float]:
    """Descent direction of the per-step divergence summed along sampled prefixes.

    Prefixes come from the teacher (KL), the student (RKL), or a fair coin per
    trajectory (JS). The prefix distribution is held fixed; only the
    next-token divergence at each visited state is differentiated.
    """
    if divergence not in DIVERGENCES:
        raise ConfigurationError(f"unknown divergence {divergence!r}")
    B = len(conds)
    eos = teacher.vocab.eos_or_none
    radix = teacher.vocab.radix
    if divergence == "JS":
        from_teacher = rng.random(B) < 0.5
    else:
        from_teacher = np.full(B, divergence == "KL")
    uniforms = rng.random((B, max_len))
    tokens = np.full((B, max_len), -1, dtype=np.int64)
    lengths = np.zeros(B, dtype=np.int64)
    for src, rows in ((teacher, np.flatnonzero(from_teacher)), (student, np.flatnonzero(~from_teacher))):
        if rows.size:
            start = start_contexts(src, [conds[i] for i in rows])
            tok, ln = kernels.sample_paths(src.weights, src.n_ctx, radix, start, uniforms[rows], eos)
            tokens[rows] = tok
            lengths[rows] = ln
    s_ctx = contexts_along(student, conds, tokens, lengths)
    t_ctx = contexts_along(teacher, conds, tokens, lengths)
    grad = ParamGrad.zeros_like(student)
    div = kernels.fdiv_grad(student.weights, teacher.weights, s_ctx, t_ctx, lengths,
                            DIVERGENCES[divergence], 1.0 / B, grad.values, grad.visited)
    return grad, float(div.mean())


def fdiv_step(student: TabularPolicy, teacher: TabularPolicy, conditioning: Sequence[int],
              divergence: str, rng: np.random.Generator, max_len: int = 16) -> ParamGrad:
    _check_pair(student, teacher)
    return fdiv_batch(student, teacher, [conditioning], divergence, rng, max_len)[0]


# LLMR

def llmr_gradient(student: TabularPolicy, teacher: TabularPolicy, conds: Sequence[Sequence[int]],
                  tokens: np.ndarray, lengths: np.ndarray, baseline: float = 0.0,
                  row_max: Optional[np.ndarray] = None):
    """REINFORCE ascent direction for fixed sampled paths.

    Returns ``(grad, step_rewards, totals)`` where ``grad`` is the batch mean of
    ``sum_t (G_t - baseline) * d log pi(y_t | y_<t)``.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    t_ctx = contexts_along(teacher, conds, tokens, lengths)
    s_ctx = contexts_along(student, conds, tokens, lengths)
    rewards = path_rewards(teacher, t_ctx, tokens, lengths, row_max)
    g = suffix_sums(rewards)
    live = np.arange(tokens.shape[1])[None, :] < lengths[:, None]
    coef = np.where(live, (g - baseline) / len(conds), 0.0)
    grad = ParamGrad.zeros_like(student)
    kernels.logprob_grad(student.weights, s_ctx, tokens, lengths, coef, grad.values, grad.visited)
    return grad, rewards, g[:, 0].copy()


def llmr_path_gradient(student: TabularPolicy, teacher: TabularPolicy, conditioning: Sequence[int],
                       y: Sequence[int], baseline: float = 0.0) -> ParamGrad:
    """The gradient ``llmr_step`` returns when it happens to sample ``y``."""
    y = student.vocab.validate(y)
    tokens, lengths = _pad([y])
    return llmr_gradient(student, teacher, [conditioning], tokens, lengths, baseline)[0]


def llmr_batch(student: TabularPolicy, teacher: TabularPolicy, conds: Sequence[Sequence[int]],
               max_len: int, rng: np.random.Generator, baseline: float = 0.0,
               row_max: Optional[np.ndarray] = None):
    tokens, lengths = sample_batch(student, conds, max_len, rng)
    grad, rewards, totals = llmr_gradient(student, teacher, conds, tokens, lengths, baseline, row_max)
    return grad, rewards, totals, tokens, lengths


def llmr_step(student: TabularPolicy, teacher: TabularPolicy, conditioning: Sequence[int],
              config: TrainConfig, rng: np.random.Generator,
              baseline: float = 0.0) -> Tuple[ParamGrad, RewardedTrajectory]:
    """Sample ``y`` from the student, score it with the teacher's induced reward,
    and return the REINFORCE ascent direction with the scored trajectory."""
    _check_pair(student, teacher)
    b = baseline if config.baseline_enabled else 0.0
    grad, rewards, totals, tokens, lengths = llmr_batch(student, teacher, [conditioning],
                                                        config.max_len, rng, b)
    n = int(lengths[0])
    steps = [float(r) for r in rewards[0, :n]]
    g = list(suffix_sums(rewards[:, :n])[0])
    traj = RewardedTrajectory(tuple(int(c) for c in conditioning),
                              tuple(int(t) for t in tokens[0, :n]), steps, [float(x) for x in g],
                              float(g[0]))
    return grad, traj


# training loop

def run_training(student: TabularPolicy, teacher: TabularPolicy, inputs: Sequence[Sequence[int]],
                 config: TrainConfig, probe_inputs: Optional[Sequence[Sequence[int]]] = None) -> TrainReport:
    """Run ``config.steps`` batched updates of ``config.method`` on ``student`` in place."""
    config.validate()
    _check_pair(student, teacher)
    if not inputs:
        raise ConfigurationError("training needs at least one input")
    inputs = [tuple(teacher.vocab.validate(c)) for c in inputs]
    rng = np.random.default_rng(config.seed)
    probe = ProbeSet(teacher, student, probe_inputs if probe_inputs else inputs, config.max_len)
    report = TrainReport(config=config, student=student)
    method = config.method

    targets = None
    if method == "SeqKD":
        targets = {c: beam_search(teacher, c, config.beam_width, config.max_len) for c in set(inputs)}
    row_max = teacher.weights.max(axis=1)
    recent: deque = deque(maxlen=config.baseline_window)

    for step in range(config.steps):
        picks = rng.integers(len(inputs), size=config.batch_size)
        conds = [inputs[i] for i in picks]
        mean_reward = None
        if method == "SeqKD":
            grad, objective = seqkd_gradient(student, conds, [targets[c] for c in conds])
        elif method == "LLMR":
            b = float(np.mean(recent)) if (config.baseline_enabled and recent) else 0.0
            grad, _, totals, _, _ = llmr_batch(student, teacher, conds, config.max_len, rng, b, row_max)
            objective = mean_reward = float(totals.mean())
            recent.extend(totals.tolist())
        else:
            grad, objective = fdiv_batch(student, teacher, conds, method, rng, config.max_len)
        if not np.isfinite(objective):
            raise NumericError(f"non-finite objective at step {step}")
        sgd_update(student, grad, config.learning_rate)
        report.records.append(StepRecord(step, objective, mean_reward, probe.kl(student)))
    return report


def pre_distill(student: TabularPolicy, teacher: TabularPolicy, inputs: Sequence[Sequence[int]],
                config: TrainConfig, probe_inputs=None) -> TrainReport:
    """Cross-entropy warm start on teacher beam outputs (SeqKD mechanics)."""
    cfg = TrainConfig(**{**config.to_dict(), "method": "SeqKD"})
    return run_training(student, teacher, inputs, cfg, probe_inputs)


def train_seqkd(student: TabularPolicy, teacher: TabularPolicy, inputs: Sequence[Sequence[int]],
                config: TrainConfig, probe_inputs=None) -> TrainReport:
    return pre_distill(student, teacher, inputs, config, probe_inputs)
