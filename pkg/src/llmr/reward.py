"""Dense per-token reward induced from a teacher's logits.

The teacher's logits are read as q-values (its next-token distribution is the
Boltzmann distribution they induce). A step reward is recovered by running the
Bellman optimality equation backwards with discount 1::

    r_t = q(y_t; y_<t) - max_v q(v; y_<t+1)     (non-terminal)
    r_T = q(y_T; y_<T)                           (terminal step, no successor)
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import EmptySequenceError, NumericError
from .policy import GenerationState, TabularPolicy, TokenSequence


@dataclass
class RewardedTrajectory:
    conditioning: TokenSequence
    tokens: TokenSequence
    step_rewards: List[float]
    gains: List[float]
    total: float

    def to_dict(self, vocab=None) -> dict:
        conv = vocab.decode if vocab is not None else list
        return {
            "conditioning": conv(self.conditioning),
            "tokens": conv(self.tokens),
            "step_rewards": [float(r) for r in self.step_rewards],
            "gains": [float(g) for g in self.gains],
            "total": float(self.total),
        }

    def to_json(self, vocab=None) -> str:
        return json.dumps(self.to_dict(vocab), sort_keys=True)


def induce_q_values(teacher: TabularPolicy, state: GenerationState) -> np.ndarray:
    """Teacher logits, taken verbatim as q-values of every candidate token."""
    return teacher.logits(state)


def step_reward(teacher: TabularPolicy, conditioning: Sequence[int], prefix: Sequence[int],
                token: int, is_terminal: bool) -> float:
    state = GenerationState(tuple(conditioning), tuple(prefix))
    q_taken = float(induce_q_values(teacher, state)[token])
    if is_terminal:
        return q_taken
    return q_taken - float(induce_q_values(teacher, state.append(token)).max())


def gains(step_rewards: Sequence[float]) -> List[float]:
    """Suffix sums ``G_t = sum_{tau >= t} r_tau``."""
    if len(step_rewards) == 0:
        raise EmptySequenceError("gains of an empty reward list")
    out = [0.0] * len(step_rewards)
    acc = 0.0
    for t in range(len(step_rewards) - 1, -1, -1):
        acc += float(step_rewards[t])
        out[t] = acc
    return out


def path_rewards(teacher: TabularPolicy, t_ctx: np.ndarray, tokens: np.ndarray,
                 lengths: np.ndarray, row_max: np.ndarray = None) -> np.ndarray:
    """Step rewards for a padded batch of paths, given teacher contexts per position.

    ``row_max`` (max logit per teacher context) can be precomputed once per
    frozen teacher. The last position of every path is terminal. Padding
    positions get reward 0.
    """
    if row_max is None:
        row_max = teacher.weights.max(axis=1)
    B, L = tokens.shape
    pos = np.arange(L)[None, :]
    live = pos < lengths[:, None]
    rewards = np.zeros((B, L))
    rewards[live] = teacher.weights[t_ctx[live], tokens[live]]
    nonterminal = pos[:, :-1] < (lengths[:, None] - 1)
    rewards[:, :-1][nonterminal] -= row_max[t_ctx[:, 1:][nonterminal]]
    return rewards


def suffix_sums(rewards: np.ndarray) -> np.ndarray:
    return np.cumsum(rewards[:, ::-1], axis=1)[:, ::-1]


def score_trajectory(teacher: TabularPolicy, conditioning: Sequence[int],
                     y: Sequence[int]) -> RewardedTrajectory:
    y = teacher.vocab.validate(y)
    if not y:
        raise EmptySequenceError("cannot score an empty sequence")
    radix, n_ctx = teacher.vocab.radix, teacher.n_ctx
    ctx = np.empty((1, len(y)), dtype=np.int64)
    idx = teacher.context_index(conditioning)
    for t, tok in enumerate(y):
        ctx[0, t] = idx
        idx = (idx * radix + tok) % n_ctx
    r = path_rewards(teacher, ctx, np.array([y], dtype=np.int64), np.array([len(y)]))[0]
    if not np.all(np.isfinite(r)):
        raise NumericError("non-finite induced reward")
    steps = [float(v) for v in r]
    g = gains(steps)
    return RewardedTrajectory(tuple(int(c) for c in conditioning), y, steps, g, g[0])
