import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import order0, random_policy, toy_vocab
from llmr.errors import CapacityError, ConfigurationError, EmptyInputError
from llmr.metrics import (
    EXERROR_HEADER,
    ExposureBiasReport,
    accumulated_kl,
    accumulated_kl_curve,
    corpus_bleu,
    corpus_rouge,
    distinct_n,
    excess_error_pct,
    exerror_csv,
    exerror_sweep,
    lcs_length,
    metric_record,
    rouge,
)
from llmr.oracle import exact_excess_error
from llmr.policy import TabularPolicy, Vocab

seeds = st.integers(0, 2 ** 32 - 1)
A, B, C, D = 0, 1, 2, 3
seqs = st.lists(st.integers(0, 5), min_size=1, max_size=8).map(tuple)


# BLEU

def test_bleu_identity_and_hand_example():
    assert corpus_bleu([(A, B, C, D, A)], [(A, B, C, D, A)], 4) == pytest.approx(1.0, abs=1e-15)
    assert corpus_bleu([(A, B, C)], [(A, B, C)], 2) == pytest.approx(1.0, abs=1e-15)
    v = corpus_bleu([(A, B, C)], [(A, B, D)], 2)
    assert v == pytest.approx(math.sqrt(1 / 3), abs=1e-15)
    assert abs(v - 0.5774) < 1e-4


def test_bleu_smoothing_keeps_disjoint_pairs_positive():
    # with 1/(2 * count) smoothing the value falls like 1/(2 * length); a long
    # disjoint pair lands below 0.01, short ones stay positive but larger
    hyp = tuple(range(60))
    ref = tuple(range(100, 160))
    v = corpus_bleu([hyp], [ref], 4)
    assert 0 < v <= 0.01
    assert corpus_bleu([(A, B, C)], [(D, D, D)], 2) > 0


def test_bleu_brevity_penalty():
    v = corpus_bleu([(A, B)], [(A, B, C, D)], 2)
    assert v == pytest.approx(math.exp(1 - 4 / 2), abs=1e-15)


def test_bleu_errors():
    with pytest.raises(EmptyInputError):
        corpus_bleu([], [], 2)
    with pytest.raises(ConfigurationError):
        corpus_bleu([(A,)], [], 2)


@given(st.lists(st.tuples(seqs, seqs), min_size=1, max_size=6), seeds)
def test_bleu_is_pair_permutation_invariant(pairs, seed):
    perm = np.random.default_rng(seed).permutation(len(pairs))
    h, r = zip(*pairs)
    h2, r2 = zip(*[pairs[i] for i in perm])
    assert corpus_bleu(h, r, 4) == pytest.approx(corpus_bleu(h2, r2, 4), rel=1e-12)
    assert 0 <= corpus_bleu(h, r, 2) <= 1


# ROUGE

def test_rouge_examples():
    for variant in ("R1", "R2", "RL"):
        assert rouge((A, B, C), (A, B, C), variant) == (1.0, 1.0, 1.0)
    p, r, f = rouge((A, B, C), (A, D, C), "R1")
    assert p == r == f == pytest.approx(2 / 3)
    assert rouge((A, B, C), (A, D, C), "RL")[2] == pytest.approx(2 / 3)
    assert rouge((A, B, C), (A, D, C), "R2") == (0.0, 0.0, 0.0)
    assert lcs_length((A, B, C, D), (B, D)) == 2


def test_rouge_errors():
    with pytest.raises(EmptyInputError):
        rouge((A,), (), "R1")
    with pytest.raises(ConfigurationError):
        rouge((A,), (A,), "R3")


def test_corpus_rouge_is_mean_over_pairs():
    f = corpus_rouge([(A, B, C), (A,)], [(A, D, C), (A,)], "R1")[2]
    assert f == pytest.approx((2 / 3 + 1) / 2)


@given(st.lists(st.tuples(seqs, seqs), min_size=1, max_size=6), seeds)
def test_rouge_is_pair_permutation_invariant(pairs, seed):
    perm = np.random.default_rng(seed).permutation(len(pairs))
    h, r = zip(*pairs)
    h2, r2 = zip(*[pairs[i] for i in perm])
    for v in ("R1", "R2", "RL"):
        assert np.allclose(corpus_rouge(h, r, v), corpus_rouge(h2, r2, v), rtol=1e-12)


# Distinct-n

def test_distinct_examples():
    assert distinct_n([(A, A, A, A)], 1) == 0.25
    assert distinct_n([(A, B, A, B)], 2) == pytest.approx(2 / 3)
    assert distinct_n([(A, B), (A, B)], 1) == 0.5
    assert distinct_n([(A,), (A, B, C)], 3) == 1.0


def test_distinct_needs_long_enough_output():
    with pytest.raises(EmptyInputError):
        distinct_n([(A,), ()], 2)


@given(st.lists(seqs, min_size=1, max_size=6), seeds)
def test_distinct_is_permutation_invariant(outs, seed):
    perm = np.random.default_rng(seed).permutation(len(outs))
    v = distinct_n(outs, 1)
    assert 0 < v <= 1
    assert v == distinct_n([outs[i] for i in perm], 1)


def test_metric_record_shape():
    assert metric_record("bleu", {"max_n": 2}, 0.5) == {"metric": "bleu", "params": {"max_n": 2},
                                                       "value": 0.5, "se": None}


# accumulated KL and ExError

def test_identical_models_give_zero_kl_and_undefined_exerror():
    p = random_policy(toy_vocab(3), 1, np.random.default_rng(0))
    for src in ("student", "teacher"):
        assert accumulated_kl(p, p, (), 4, src) == (0.0, 0.0)
    rep = excess_error_pct(p, p, (), 4)
    assert rep.d_s == rep.d_t == 0.0 and rep.exerror_pct is None
    assert oracle_undefined(p)


def oracle_undefined(p):
    return exact_excess_error(p, p, (), 3).exerror_pct is None


def test_order0_example_value():
    ab = Vocab(("a", "b"))
    teacher = order0(ab, (1.0, 0.0), trainable=False)
    student = order0(ab, (0.0, 0.0))
    p = np.array([math.e / (math.e + 1), 1 / (math.e + 1)])
    kl = float(np.sum(p * np.log(p / 0.5)))
    # 0.7311 ln 1.4622 + 0.2689 ln 0.5378
    assert abs(kl - 0.11094) < 1e-5
    for src in ("student", "teacher"):
        value, se = accumulated_kl(teacher, student, (), 2, src)
        assert value == pytest.approx(2 * kl, abs=1e-15) and se == 0.0
    rep = excess_error_pct(teacher, student, (), 2)
    assert rep.exerror_pct == 0.0 and abs(rep.d_t - 0.22189) < 1e-5


@given(seeds)
def test_order0_pairs_have_exactly_zero_exerror(seed):
    rng = np.random.default_rng(seed)
    vocab = toy_vocab(int(rng.integers(2, 6)), eos=bool(rng.integers(2)))
    t = random_policy(vocab, 0, rng, trainable=False)
    s = random_policy(vocab, 0, rng)
    for rep in exerror_sweep(t, s, [(0,), ()], 6):
        assert rep.exerror_pct == 0.0


def constructed_pair():
    """Student matches the teacher everywhere except after 'b', where it
    commits to 'b' -- a state its own rollouts visit far more often."""
    ab = Vocab(("a", "b"))
    pad = ab.pad_id
    teacher = TabularPolicy(ab, 1, table={(pad,): (math.log(0.7), math.log(0.3)),
                                          (0,): (math.log(0.9), math.log(0.1)),
                                          (1,): (0.0, 0.0)}, trainable=False)
    student = teacher.copy(trainable=True)
    student.set_row((1,), (math.log(0.01), math.log(0.99)))
    return teacher, student


def test_constructed_exposure_bias_is_positive_and_matches_enumeration():
    teacher, student = constructed_pair()
    # the first step is shared, so the gap opens from length 3 on
    assert excess_error_pct(teacher, student, (), 2).exerror_pct == 0.0
    for L in range(3, 7):
        rep = excess_error_pct(teacher, student, (), L)
        ref = exact_excess_error(teacher, student, (), L)
        assert rep.exerror_pct > 0
        assert rep.d_s == pytest.approx(ref.d_s, abs=1e-12)
        assert rep.exerror_pct == pytest.approx(ref.exerror_pct, abs=1e-9)


@given(seeds)
def test_exact_mode_matches_oracle_on_random_order1_pairs(seed):
    rng = np.random.default_rng(seed)
    vocab = toy_vocab(int(rng.integers(2, 4)))
    t = random_policy(vocab, 1, rng, trainable=False)
    s = random_policy(vocab, 1, rng)
    cond = tuple(int(x) for x in rng.integers(vocab.size, size=int(rng.integers(0, 3))))
    L = int(rng.integers(1, 5))
    a, b = excess_error_pct(t, s, cond, L), exact_excess_error(t, s, cond, L)
    assert abs(a.d_s - b.d_s) < 1e-9 and abs(a.d_t - b.d_t) < 1e-9
    assert abs(a.exerror_pct - b.exerror_pct) < 1e-9


@given(seeds)
def test_accumulated_kl_is_monotone_in_length(seed):
    rng = np.random.default_rng(seed)
    vocab = toy_vocab(4, eos=True)
    t = random_policy(vocab, 2, rng, trainable=False)
    s = random_policy(vocab, 1, rng)
    for src in ("student", "teacher"):
        curve, _ = accumulated_kl_curve(t, s, (1,), 8, src)
        assert np.all(curve >= 0) and np.all(np.diff(curve) >= -1e-12)


def test_monte_carlo_agrees_with_exact_within_three_standard_errors():
    rng = np.random.default_rng(77)
    fails = 0
    checks = 0
    for _ in range(10):
        vocab = toy_vocab(3)
        t = random_policy(vocab, 1, rng, trainable=False)
        s = random_policy(vocab, 1, rng)
        for src in ("student", "teacher"):
            exact, _ = accumulated_kl(t, s, (), 4, src)
            est, se = accumulated_kl(t, s, (), 4, src, mode="monte_carlo", samples=4000, rng=rng)
            checks += 1
            fails += abs(est - exact) > 3 * se
    # 3 s.e. bands miss about 0.3% of the time; allow one miss in 20 checks
    assert fails <= 1, (fails, checks)


def test_monte_carlo_is_seeded():
    t, s = constructed_pair()
    a = accumulated_kl(t, s, (), 5, "student", "mc", 200, np.random.default_rng(3))
    b = accumulated_kl(t, s, (), 5, "student", "mc", 200, np.random.default_rng(3))
    assert a == b


def test_exact_mode_guard_and_mode_errors():
    vocab = toy_vocab(12)
    t = random_policy(vocab, 4, np.random.default_rng(0), trainable=False)
    s = TabularPolicy(vocab, 4)
    with pytest.raises(CapacityError, match="Monte-Carlo"):
        accumulated_kl(t, s, (), 6, "student", max_states=1000)
    with pytest.raises(ConfigurationError):
        accumulated_kl(t, s, (), 2, "student", mode="grid")
    with pytest.raises(ConfigurationError):
        accumulated_kl(t, s, (), 2, "nobody")
    with pytest.raises(ConfigurationError):
        accumulated_kl(t, s, (), 0, "student")


def test_negative_and_large_exerror_are_not_clamped():
    rep = ExposureBiasReport.from_values(3, 5.0, 1.0)
    assert rep.exerror_pct == 400.0
    assert ExposureBiasReport.from_values(3, 0.5, 1.0).exerror_pct == -50.0


def test_exerror_csv_format():
    reps = [ExposureBiasReport.from_values(1, 0.0, 0.0), ExposureBiasReport.from_values(2, 0.3, 0.2, 0.01, 0.02, 10)]
    text = exerror_csv(reps, "config_hash=abc seed=1")
    lines = text.splitlines()
    assert lines[0] == "# config_hash=abc seed=1"
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert tuple(rows[0]) == EXERROR_HEADER == ("length", "d_s", "d_t", "exerror_pct", "se_s", "se_t")
    assert rows[1][3] == "undefined"
    assert float(rows[2][3]) == pytest.approx(50.0)
