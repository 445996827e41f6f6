"""Brute-force references for tests and ``verify``.

Everything here enumerates the sequence space outright, so costs are
exponential in length. A guard refuses work beyond ``max_states`` rather than
returning partial results. Nothing in the training path imports this module.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from .distill import llmr_path_gradient
from .errors import CapacityError, ConfigurationError, NumericError
from .metrics import ExposureBiasReport
from .policy import (
    GenerationState,
    ParamGrad,
    TabularPolicy,
    TokenSequence,
    Vocab,
    log_prob_gradient,
    next_token_distribution,
    require_shared_vocab,
    sequence_log_prob,
)
from .reward import score_trajectory


@dataclass(frozen=True)
class EnumerationGuard:
    max_states: int = 10 ** 6

    def check(self, count: int, what: str = "sequences") -> None:
        if count > self.max_states:
            raise CapacityError(f"enumerating {count} {what} exceeds the guard of {self.max_states}")


DEFAULT_GUARD = EnumerationGuard()


def enumerate_sequences(vocab: Vocab, length: int, eos_allowed: bool = False,
                        guard: EnumerationGuard = DEFAULT_GUARD) -> List[TokenSequence]:
    """All sequences in lexicographic order.

    ``eos_allowed=False``: every one of the ``V**length`` fixed-length sequences.
    ``eos_allowed=True``: sequences that end at their first EOS, or reach
    ``length`` without one.
    """
    if length < 1:
        raise ConfigurationError("length must be >= 1")
    V = vocab.size
    guard.check(V ** length)
    if not eos_allowed or vocab.eos is None:
        return list(itertools.product(range(V), repeat=length))
    out: List[TokenSequence] = []

    def walk(prefix):
        for v in range(V):
            seq = prefix + (v,)
            if v == vocab.eos or len(seq) == length:
                out.append(seq)
            else:
                walk(seq)

    walk(())
    return out


def _default_eos(policy: TabularPolicy, eos_allowed: Optional[bool]) -> bool:
    return policy.vocab.eos is not None if eos_allowed is None else eos_allowed


def exact_expected_reward(student: TabularPolicy, teacher: TabularPolicy, conditioning: Sequence[int],
                          T: int, eos_allowed: Optional[bool] = None,
                          guard: EnumerationGuard = DEFAULT_GUARD) -> float:
    require_shared_vocab(student, teacher)
    total = 0.0
    for y in enumerate_sequences(student.vocab, T, _default_eos(student, eos_allowed), guard):
        total += math.exp(sequence_log_prob(student, conditioning, y)) * score_trajectory(teacher, conditioning, y).total
    return total


def exact_policy_gradient(student: TabularPolicy, teacher: TabularPolicy, conditioning: Sequence[int],
                          T: int, eos_allowed: Optional[bool] = None,
                          guard: EnumerationGuard = DEFAULT_GUARD) -> ParamGrad:
    """Gradient of the expected induced reward, as sum_y q(y) R(y) grad log q(y)."""
    require_shared_vocab(student, teacher)
    grad = ParamGrad.zeros_like(student)
    for y in enumerate_sequences(student.vocab, T, _default_eos(student, eos_allowed), guard):
        w = math.exp(sequence_log_prob(student, conditioning, y)) * score_trajectory(teacher, conditioning, y).total
        grad = grad + log_prob_gradient(student, conditioning, y) * w
    return grad


def expected_llmr_gradient(student: TabularPolicy, teacher: TabularPolicy, conditioning: Sequence[int],
                           T: int, baseline: float = 0.0,
                           guard: EnumerationGuard = DEFAULT_GUARD) -> ParamGrad:
    """Exact expectation of the per-sample REINFORCE direction over every path the
    student can sample with ``max_len = T``."""
    require_shared_vocab(student, teacher)
    grad = ParamGrad.zeros_like(student)
    for y in enumerate_sequences(student.vocab, T, student.vocab.eos is not None, guard):
        q = math.exp(sequence_log_prob(student, conditioning, y))
        grad = grad + llmr_path_gradient(student, teacher, conditioning, y, baseline) * q
    return grad


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(sum(pi * (math.log(pi) - math.log(qi)) for pi, qi in zip(p, q) if pi > 0))


def _accumulated_kl_enumerated(teacher, student, source, conditioning, length) -> float:
    cond = tuple(conditioning)
    total = 0.0
    for t in range(length):
        for prefix in itertools.product(range(teacher.vocab.size), repeat=t):
            w = math.exp(sequence_log_prob(source, cond, prefix)) if prefix else 1.0
            state = GenerationState(cond, prefix)
            total += w * _kl(next_token_distribution(teacher, state), next_token_distribution(student, state))
    return total


def exact_excess_error(teacher: TabularPolicy, student: TabularPolicy, conditioning: Sequence[int],
                       length: int, guard: EnumerationGuard = DEFAULT_GUARD) -> ExposureBiasReport:
    """ExError% by enumerating every prefix of every length below ``length``."""
    require_shared_vocab(teacher, student)
    if length < 1:
        raise ConfigurationError("length must be >= 1")
    guard.check(teacher.vocab.size ** length, "prefixes")
    d_s = _accumulated_kl_enumerated(teacher, student, student, conditioning, length)
    d_t = _accumulated_kl_enumerated(teacher, student, teacher, conditioning, length)
    return ExposureBiasReport.from_values(length, d_s, d_t)


def finite_difference_gradient(fn: Callable[[TabularPolicy], float], policy: TabularPolicy,
                               eps: float = 1e-5, contexts: Optional[Iterable[int]] = None) -> ParamGrad:
    """Central differences of ``fn`` in every logit of the listed context rows (all by default)."""
    if eps <= 0:
        raise ConfigurationError("eps must be > 0")
    work = policy.copy()
    grad = ParamGrad.zeros_like(policy)
    rows = range(policy.n_ctx) if contexts is None else contexts
    for c in rows:
        grad.visited[c] = True
        for v in range(policy.V):
            orig = work.weights[c, v]
            work.weights[c, v] = orig + eps
            hi = fn(work)
            work.weights[c, v] = orig - eps
            lo = fn(work)
            work.weights[c, v] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NumericError(f"function not finite near context {c}, token {v}")
            grad.values[c, v] = (hi - lo) / (2 * eps)
    return grad


def grads_close(a: ParamGrad, b: ParamGrad, rtol: float = 1e-6, atol: float = 1e-8) -> bool:
    """Coordinate-wise ``|a - b| <= atol + rtol * max(|a|, |b|)`` over every entry."""
    x, y = a.values, b.values
    return bool(np.all(np.abs(x - y) <= atol + rtol * np.maximum(np.abs(x), np.abs(y))))
