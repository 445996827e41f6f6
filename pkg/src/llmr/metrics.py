"""Evaluation battery: corpus BLEU, ROUGE-1/2/L, Distinct-n and ExError%.

BLEU and ROUGE work directly on token ids. Divergences are in nats.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import CapacityError, ConfigurationError, EmptyInputError
from .policy import TabularPolicy, require_shared_vocab

DEFAULT_MAX_STATES = 10 ** 6
EXERROR_HEADER = ("length", "d_s", "d_t", "exerror_pct", "se_s", "se_t")


def ngram_counts(seq: Sequence[int], n: int) -> Counter:
    seq = tuple(seq)
    return Counter(seq[i:i + n] for i in range(len(seq) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]],
                max_n: int = 4) -> float:
    """Corpus BLEU with uniform weights and the standard brevity penalty.

    A zero match count at order n is replaced by ``1 / (2 * hyp_ngrams_n)``.
    """
    if not hypotheses:
        raise EmptyInputError("BLEU of an empty corpus")
    if len(hypotheses) != len(references):
        raise ConfigurationError("hypothesis and reference lists differ in length")
    if max_n < 1:
        raise ConfigurationError("max_n must be >= 1")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = ngram_counts(hyp, n)
            r = ngram_counts(ref, n)
            matched[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            total[n - 1] += sum(h.values())
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matched, total):
        p = m / t if m > 0 else 1.0 / (2 * max(t, 1))
        log_p += math.log(p)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p / max_n)


def _prf(overlap: float, hyp_total: float, ref_total: float) -> Tuple[float, float, float]:
    p = overlap / hyp_total if hyp_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge(hypothesis: Sequence[int], reference: Sequence[int], variant: str = "R1") -> Tuple[float, float, float]:
    """(precision, recall, F1) for ``R1``, ``R2`` or ``RL`` on one pair."""
    if len(reference) == 0:
        raise EmptyInputError("ROUGE needs a non-empty reference")
    if variant == "RL":
        return _prf(lcs_length(hypothesis, reference), len(hypothesis), len(reference))
    if variant not in ("R1", "R2"):
        raise ConfigurationError(f"unknown ROUGE variant {variant!r}")
    n = int(variant[1])
    h = ngram_counts(hypothesis, n)
    r = ngram_counts(reference, n)
    overlap = sum(min(c, r[g]) for g, c in h.items())
    return _prf(overlap, sum(h.values()), sum(r.values()))


def corpus_rouge(hypotheses, references, variant: str = "R1") -> Tuple[float, float, float]:
    if not hypotheses:
        raise EmptyInputError("ROUGE of an empty corpus")
    if len(hypotheses) != len(references):
        raise ConfigurationError("hypothesis and reference lists differ in length")
    scores = np.array([rouge(h, r, variant) for h, r in zip(hypotheses, references)])
    return tuple(float(x) for x in scores.mean(axis=0))


def distinct_n(outputs: Sequence[Sequence[int]], n: int) -> float:
    """Unique n-grams over total n-gram occurrences, pooled across outputs."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    pooled: Counter = Counter()
    for out in outputs:
        pooled.update(ngram_counts(out, n))
    total = sum(pooled.values())
    if total == 0:
        raise EmptyInputError(f"no output has {n} or more tokens")
    return len(pooled) / total


def metric_record(metric: str, params: dict, value, se=None) -> dict:
    return {"metric": metric, "params": params, "value": value, "se": se}


# exposure bias

@dataclass
class ExposureBiasReport:
    length: int
    d_s: float
    d_t: float
    exerror_pct: Optional[float]
    se_s: float = 0.0
    se_t: float = 0.0
    sample_count: int = 0

    @classmethod
    def from_values(cls, length, d_s, d_t, se_s=0.0, se_t=0.0, sample_count=0) -> "ExposureBiasReport":
        d_s, d_t = float(d_s), float(d_t)
        pct = (d_s - d_t) / d_t * 100.0 if d_t > 0 else None
        return cls(int(length), d_s, d_t, pct, float(se_s), float(se_t), int(sample_count))

    def to_dict(self) -> dict:
        return asdict(self)


def _source(teacher, student, prefix_source: str) -> TabularPolicy:
    if prefix_source == "student":
        return student
    if prefix_source == "teacher":
        return teacher
    raise ConfigurationError(f"prefix_source must be 'student' or 'teacher', not {prefix_source!r}")


def _softmax_rows(w: np.ndarray) -> np.ndarray:
    e = np.exp(w - w.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _kl_rows(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    lp = p_logits - p_logits.max(axis=1, keepdims=True)
    lp -= np.log(np.exp(lp).sum(axis=1, keepdims=True))
    lq = q_logits - q_logits.max(axis=1, keepdims=True)
    lq -= np.log(np.exp(lq).sum(axis=1, keepdims=True))
    return (np.exp(lp) * (lp - lq)).sum(axis=1)


def _exact_curve(teacher, student, conditioning, length, src, max_states) -> np.ndarray:
    """Per-length accumulated KL by forward recursion over the last-m-token window.

    Both models only look at their last k tokens, so the prefix distribution
    can be carried on windows of ``m = max(k_teacher, k_student)`` tokens.
    """
    vocab = teacher.vocab
    R, V = vocab.radix, vocab.size
    m = max(teacher.order, student.order)
    n_win = R ** m
    if n_win > max_states:
        raise CapacityError(
            f"exact mode needs {n_win} window states (> {max_states}); use Monte-Carlo mode"
        )
    win = np.arange(n_win)
    kl_w = _kl_rows(teacher.weights[win % teacher.n_ctx], student.weights[win % student.n_ctx])
    probs = _softmax_rows(src.weights[win % src.n_ctx])
    padded = (vocab.pad_id,) * m + tuple(vocab.validate(conditioning))
    w0 = 0
    for tok in padded[len(padded) - m:]:
        w0 = w0 * R + tok
    pi = np.zeros(n_win)
    pi[w0] = 1.0
    per_step = np.empty(length)
    for t in range(length):
        per_step[t] = pi @ kl_w
        if m == 0 or t + 1 == length:
            continue
        mass = (pi[:, None] * probs).reshape(R, n_win // R, V).sum(axis=0)
        nxt = np.zeros((n_win // R, R))
        nxt[:, :V] = mass
        pi = nxt.ravel()
    return np.cumsum(per_step)


def _mc_curve(teacher, student, conditioning, length, src, samples, rng):
    if rng is None:
        raise ConfigurationError("Monte-Carlo mode needs a seeded random source")
    if samples < 2:
        raise ConfigurationError("Monte-Carlo mode needs at least two samples")
    radix = teacher.vocab.radix
    start = np.full(samples, src.context_index(conditioning), dtype=np.int64)
    uniforms = rng.random((samples, length))
    tokens, lengths = kernels.sample_paths(src.weights, src.n_ctx, radix, start, uniforms, -1)
    t_ctx = kernels.path_contexts(tokens, lengths, np.full(samples, teacher.context_index(conditioning)),
                                  radix, teacher.n_ctx)
    s_ctx = kernels.path_contexts(tokens, lengths, np.full(samples, student.context_index(conditioning)),
                                  radix, student.n_ctx)
    per = np.cumsum(kernels.kl_positions(teacher.weights, student.weights, t_ctx, s_ctx, lengths), axis=1)
    return per.mean(axis=0), per.std(axis=0, ddof=1) / math.sqrt(samples)


def accumulated_kl_curve(teacher: TabularPolicy, student: TabularPolicy, conditioning: Sequence[int],
                         max_length: int, prefix_source: str, mode: str = "exact", samples: int = 1000,
                         rng: Optional[np.random.Generator] = None,
                         max_states: int = DEFAULT_MAX_STATES) -> Tuple[np.ndarray, np.ndarray]:
    """Accumulated KL(teacher || student) for every length 1..max_length.

    Prefixes run for the full length; EOS is treated as an ordinary token here.
    The next-token KL at each state is always exact; ``monte_carlo`` mode only
    samples prefixes.
    """
    require_shared_vocab(teacher, student)
    if max_length < 1:
        raise ConfigurationError("length must be >= 1")
    src = _source(teacher, student, prefix_source)
    if mode == "exact":
        return _exact_curve(teacher, student, conditioning, max_length, src, max_states), np.zeros(max_length)
    if mode in ("monte_carlo", "mc"):
        return _mc_curve(teacher, student, conditioning, max_length, src, samples, rng)
    raise ConfigurationError(f"unknown mode {mode!r}")


def accumulated_kl(teacher, student, conditioning, length, prefix_source, mode="exact", samples=1000,
                   rng=None, max_states=DEFAULT_MAX_STATES) -> Tuple[float, float]:
    vals, ses = accumulated_kl_curve(teacher, student, conditioning, length, prefix_source, mode,
                                     samples, rng, max_states)
    return float(vals[-1]), float(ses[-1])


def exerror_sweep(teacher: TabularPolicy, student: TabularPolicy, conditionings: Sequence[Sequence[int]],
                  max_length: int, mode: str = "exact", samples: int = 1000,
                  rng: Optional[np.random.Generator] = None,
                  max_states: int = DEFAULT_MAX_STATES) -> List[ExposureBiasReport]:
    """ExError% for lengths 1..max_length, with D_s and D_t averaged over inputs."""
    if not conditionings:
        raise EmptyInputError("ExError needs at least one input")
    n = len(conditionings)
    d = {}
    for source in ("student", "teacher"):
        vals = np.zeros(max_length)
        var = np.zeros(max_length)
        for cond in conditionings:
            v, se = accumulated_kl_curve(teacher, student, cond, max_length, source, mode, samples, rng,
                                         max_states)
            vals += v
            var += se ** 2
        d[source] = (vals / n, np.sqrt(var) / n)
    count = samples * n if mode != "exact" else 0
    return [
        ExposureBiasReport.from_values(l + 1, d["student"][0][l], d["teacher"][0][l],
                                       d["student"][1][l], d["teacher"][1][l], count)
        for l in range(max_length)
    ]


def excess_error_pct(teacher: TabularPolicy, student: TabularPolicy, conditioning: Sequence[int],
                     length: int, mode: str = "exact", samples: int = 1000,
                     rng: Optional[np.random.Generator] = None,
                     max_states: int = DEFAULT_MAX_STATES) -> ExposureBiasReport:
    return exerror_sweep(teacher, student, [conditioning], length, mode, samples, rng, max_states)[-1]


def exerror_csv(reports: Sequence[ExposureBiasReport], comment: Optional[str] = None) -> str:
    """CSV text with header ``length,d_s,d_t,exerror_pct,se_s,se_t``.

    An optional ``# comment`` line precedes the header; undefined ExError is
    written as ``undefined``.
    """
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EXERROR_HEADER)
    for r in reports:
        pct = "undefined" if r.exerror_pct is None else repr(r.exerror_pct)
        writer.writerow([r.length, repr(r.d_s), repr(r.d_t), pct, repr(r.se_s), repr(r.se_t)])
    return buf.getvalue()
