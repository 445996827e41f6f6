"""Cross-checks of the training-path code against the brute-force oracles.

Each check draws small random instances, compares two independent routes to
the same quantity, and reports the worst discrepancy it saw.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .. import oracle
from ..metrics import excess_error_pct
from ..policy import (
    GenerationState,
    TabularPolicy,
    Vocab,
    greedy_decode,
    log_prob_gradient,
    next_token_distribution,
    sequence_log_prob,
)
from ..reward import induce_q_values, score_trajectory, step_reward


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    instances: int
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst={self.worst:.3g} over {self.instances} instances ({self.seconds:.2f}s)"


def toy_vocab(V: int, eos: bool = False) -> Vocab:
    """``V`` tokens named t0.. with no BOS; the last one is EOS if requested."""
    names = tuple(f"t{i}" for i in range(V))
    return Vocab(names, bos=None, eos=V - 1 if eos else None)


def random_policy(vocab: Vocab, order: int, rng: np.random.Generator, scale: float = 3.0,
                  trainable: bool = True) -> TabularPolicy:
    """Every logit drawn uniform[-scale, scale]."""
    p = TabularPolicy(vocab, order, trainable=trainable)
    p.weights[:] = rng.uniform(-scale, scale, size=p.weights.shape)
    p.stored[:] = True
    return p


def random_instance(rng: np.random.Generator, max_v: int, max_t: int, eos: Optional[bool] = None,
                    max_order: int = 2, scale: float = 3.0):
    """(vocab, teacher, student, conditioning, T) with random sizes."""
    V = int(rng.integers(2, max_v + 1))
    has_eos = bool(rng.integers(2)) if eos is None else eos
    vocab = toy_vocab(V, has_eos and V > 2)
    teacher = random_policy(vocab, int(rng.integers(0, max_order + 1)), rng, scale, trainable=False)
    student = random_policy(vocab, int(rng.integers(0, max_order + 1)), rng, scale)
    cond = tuple(int(x) for x in rng.integers(V, size=int(rng.integers(0, 3))))
    T = int(rng.integers(1, max_t + 1))
    return vocab, teacher, student, cond, T


def _rel(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


def check_reward_identity(rng, instances: int = 200) -> CheckResult:
    """Total reward = summed step rewards = first q-value plus log-ratios."""
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        vocab, teacher, _, cond, T = random_instance(rng, 16, 8, eos=False)
        y = tuple(int(x) for x in rng.integers(vocab.size, size=T))
        traj = score_trajectory(teacher, cond, y)
        summed = sum(step_reward(teacher, cond, y[:t], y[t], t == T - 1) for t in range(T))
        ratio = induce_q_values(teacher, GenerationState(cond, ()))[y[0]]
        for t in range(1, T):
            p = next_token_distribution(teacher, GenerationState(cond, y[:t]))
            ratio += math.log(p[y[t]] / p.max())
        worst = max(worst, abs(traj.total - summed), abs(traj.total - ratio))
    return CheckResult("reward identities", worst <= 1e-9, worst, instances, time.perf_counter() - t0)


def check_greedy_optimality(rng, instances: int = 20) -> CheckResult:
    """Teacher-greedy continuation maximizes total reward among same-first-token sequences."""
    t0 = time.perf_counter()
    worst = 0.0
    vocab = toy_vocab(3)
    for _ in range(instances):
        teacher = random_policy(vocab, int(rng.integers(0, 3)), rng, trainable=False)
        worst = max(worst, greedy_reward_gap(teacher, (), 4))
    return CheckResult("greedy optimality", worst <= 0.0, worst, instances, time.perf_counter() - t0)


def greedy_reward_gap(teacher: TabularPolicy, cond, T: int) -> float:
    """Largest amount by which any sequence beats the greedy continuation of its first token."""
    best = {}
    for y in itertools.product(range(teacher.vocab.size), repeat=T):
        r = score_trajectory(teacher, cond, y).total
        best[y[0]] = max(best.get(y[0], -math.inf), r)
    gap = -math.inf
    for first, top in best.items():
        tail = greedy_decode(teacher, tuple(cond) + (first,), T - 1, stop_at_eos=False) if T > 1 else ()
        g = score_trajectory(teacher, cond, (first,) + tuple(tail)).total
        gap = max(gap, top - g)
    return gap


def check_boltzmann(rng, instances: int = 200) -> CheckResult:
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        vocab, teacher, _, cond, T = random_instance(rng, 16, 6)
        prefix = tuple(int(x) for x in rng.integers(vocab.size, size=T - 1))
        state = GenerationState(cond, prefix)
        q = induce_q_values(teacher, state)
        e = np.exp(q - q.max())
        worst = max(worst, float(np.max(np.abs(e / e.sum() - next_token_distribution(teacher, state)))))
    return CheckResult("Boltzmann consistency", worst <= 1e-12, worst, instances, time.perf_counter() - t0)


def check_reinforce_expectation(rng, instances: int = 30) -> CheckResult:
    """Exact expectation of the sampled LLMR direction equals the exact policy gradient."""
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        _, teacher, student, cond, T = random_instance(rng, 3, 3)
        a = oracle.expected_llmr_gradient(student, teacher, cond, T)
        b = oracle.exact_policy_gradient(student, teacher, cond, T)
        worst = max(worst, _rel(a.values, b.values, floor=1e-8))
    return CheckResult("REINFORCE expectation", worst <= 1e-8, worst, instances, time.perf_counter() - t0)


def check_gradients(rng, instances: int = 20) -> CheckResult:
    """Analytic log-prob and expected-reward gradients against central differences."""
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        vocab, teacher, student, cond, T = random_instance(rng, 3, 3, max_order=1)
        y = tuple(int(x) for x in rng.integers(vocab.size, size=T))
        fd = oracle.finite_difference_gradient(lambda p: sequence_log_prob(p, cond, y), student)
        worst = max(worst, grad_excess(log_prob_gradient(student, cond, y), fd))
        fd = oracle.finite_difference_gradient(
            lambda p: oracle.exact_expected_reward(p, teacher, cond, T), student)
        worst = max(worst, grad_excess(oracle.exact_policy_gradient(student, teacher, cond, T), fd))
    return CheckResult("finite-difference gradients", worst <= 1.0, worst, instances, time.perf_counter() - t0)


def grad_excess(a, b, rtol: float = 1e-6, atol: float = 1e-8) -> float:
    """Worst ``|a - b| / (atol + rtol * max(|a|, |b|))``; at most 1 iff ``grads_close`` holds."""
    x, y = a.values, b.values
    return float(np.max(np.abs(x - y) / (atol + rtol * np.maximum(np.abs(x), np.abs(y)))))


def check_exerror(rng, instances: int = 30) -> CheckResult:
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        _, teacher, student, cond, _ = random_instance(rng, 4, 1)
        L = int(rng.integers(1, 5))
        a = excess_error_pct(teacher, student, cond, L, mode="exact")
        b = oracle.exact_excess_error(teacher, student, cond, L)
        worst = max(worst, abs(a.d_s - b.d_s), abs(a.d_t - b.d_t))
        if a.exerror_pct is not None and b.exerror_pct is not None:
            worst = max(worst, abs(a.exerror_pct - b.exerror_pct) * b.d_t / 100.0)
    return CheckResult("ExError exact vs enumeration", worst <= 1e-9, worst, instances, time.perf_counter() - t0)


CHECKS: List[Callable] = [
    check_reward_identity,
    check_greedy_optimality,
    check_boltzmann,
    check_reinforce_expectation,
    check_gradients,
    check_exerror,
]


def run_checks(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    return [check(rng) for check in CHECKS]
