import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import order0, random_instance, random_policy, toy_vocab
from llmr.distill import (
    METHODS,
    ProbeSet,
    TrainConfig,
    fdiv_batch,
    fdiv_step,
    llmr_path_gradient,
    llmr_step,
    pre_distill,
    run_training,
    seqkd_gradient,
    train_seqkd,
)
from llmr.errors import ConfigurationError, NotTrainableError
from llmr.oracle import (
    enumerate_sequences,
    exact_expected_reward,
    exact_policy_gradient,
    expected_llmr_gradient,
    finite_difference_gradient,
    grads_close,
)
from llmr.policy import (
    TabularPolicy,
    Vocab,
    beam_search,
    greedy_decode,
    log_prob_gradient,
    sequence_log_prob,
)

seeds = st.integers(0, 2 ** 32 - 1)


def small_pair(seed, V=5, t_order=2, s_order=1):
    rng = np.random.default_rng(seed)
    vocab = Vocab.build([f"w{i}" for i in range(V - 2)])
    teacher = random_policy(vocab, t_order, rng, 2.0, trainable=False)
    student = random_policy(vocab, s_order, rng, 0.5)
    inputs = [(int(a), int(b)) for a in range(2, V) for b in range(2, V)]
    return vocab, teacher, student, inputs


# configuration

def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(method="PPO").validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"method": "KL", "bogus": 1})
    assert TrainConfig.from_dict({"method": "JS", "steps": 3}).steps == 3


def test_unknown_method_rejected_by_training():
    _, teacher, student, inputs = small_pair(0)
    with pytest.raises(ConfigurationError):
        run_training(student, teacher, inputs, TrainConfig(method="XE", steps=1))


def test_frozen_student_rejected():
    _, teacher, student, inputs = small_pair(0)
    with pytest.raises(NotTrainableError):
        run_training(student.copy(trainable=False), teacher, inputs, TrainConfig(method="KL", steps=1))


# pre-distillation and SeqKD

def test_predistill_identical_models_start_at_zero_probe_kl():
    # SeqKD ascends the log-probability of hard beam targets, so the student
    # does drift off the teacher; with a small step the drift stays small.
    vocab, teacher, _, inputs = small_pair(1, t_order=1)
    student = teacher.copy(trainable=True)
    rep = pre_distill(student, teacher, inputs, TrainConfig(steps=20, learning_rate=0.01))
    kls = rep.probe_kls()
    assert ProbeSet(teacher, teacher, inputs, 16).kl(teacher) == 0.0
    assert kls[0] < 1e-3 and np.all(kls < 1e-2)


def test_predistill_order0_converges_to_teacher_beam():
    vocab = Vocab.build(["x", "y", "z"])
    teacher = order0(vocab, (-5.0, 0.5, 1.0, 0.2, -0.3), trainable=False)
    student = TabularPolicy(vocab, 1)
    target = beam_search(teacher, (2,), 4, 6)
    pre_distill(student, teacher, [(2,)], TrainConfig(steps=300, batch_size=4, learning_rate=0.5, max_len=6))
    assert greedy_decode(student, (2,), 6) == target


@pytest.mark.parametrize("fn", [pre_distill, train_seqkd])
def test_zero_steps_or_zero_rate_leave_student_unchanged(fn):
    _, teacher, student, inputs = small_pair(2)
    before = student.copy()
    rep = fn(student, teacher, inputs, TrainConfig(steps=0))
    assert rep.records == [] and student.same_values(before)
    fn(student, teacher, inputs, TrainConfig(steps=5, learning_rate=0.0))
    assert student.same_values(before)


def test_seqkd_gradient_is_log_prob_gradient_of_target():
    _, teacher, student, inputs = small_pair(3)
    c = inputs[0]
    y = beam_search(teacher, c, 4, 16)
    g, nll = seqkd_gradient(student, [c], [y])
    assert grads_close(g, log_prob_gradient(student, c, y), rtol=1e-12, atol=1e-14)
    assert nll == pytest.approx(-sequence_log_prob(student, c, y), rel=1e-12)


def test_seqkd_raises_target_probability():
    vocab, teacher, student, inputs = small_pair(4, V=5, t_order=1, s_order=1)
    targets = {c: beam_search(teacher, c, 4, 8) for c in inputs}
    before = sum(sequence_log_prob(student, c, targets[c]) for c in inputs)
    train_seqkd(student, teacher, inputs, TrainConfig(steps=100, learning_rate=0.3, max_len=8))
    after = sum(sequence_log_prob(student, c, targets[c]) for c in inputs)
    assert after > before


# f-divergences

@pytest.mark.parametrize("div", ["KL", "RKL", "JS"])
def test_identical_models_have_zero_divergence_and_gradient(div):
    _, teacher, _, inputs = small_pair(5)
    student = teacher.copy(trainable=True)
    g, d = fdiv_batch(student, teacher, inputs, div, np.random.default_rng(0), 10)
    assert abs(d) < 1e-14 and g.max_abs() < 1e-14
    assert fdiv_step(student, teacher, inputs[0], div, np.random.default_rng(1)).max_abs() < 1e-14


def test_single_context_kl_value(ab):
    teacher = order0(ab, (0.0, 0.0), trainable=False)
    student = order0(ab, (0.0, math.log(3.0)))
    _, d = fdiv_batch(student, teacher, [()], "KL", np.random.default_rng(0), 1)
    expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    assert d == pytest.approx(expected, abs=1e-15)
    assert abs(expected - 0.1438) < 1e-4


@pytest.mark.parametrize("div", ["KL", "RKL", "JS"])
@given(seed=seeds)
def test_divergence_gradient_matches_finite_differences(div, seed):
    rng = np.random.default_rng(seed)
    vocab = toy_vocab(int(rng.integers(2, 6)))
    teacher = random_policy(vocab, 0, rng, trainable=False)
    student = random_policy(vocab, 0, rng)

    def value(p):
        return fdiv_batch(p, teacher, [()], div, np.random.default_rng(0), 1)[1]

    descent, _ = fdiv_batch(student, teacher, [()], div, np.random.default_rng(0), 1)
    fd = finite_difference_gradient(value, student)
    assert grads_close(descent * -1.0, fd)


@pytest.mark.parametrize("div", ["KL", "RKL", "JS"])
def test_divergence_training_reduces_probe_kl(div):
    _, teacher, student, inputs = small_pair(6, t_order=1, s_order=1)
    rep = run_training(student, teacher, inputs, TrainConfig(method=div, steps=300, learning_rate=0.5, max_len=8))
    kls = rep.probe_kls()
    assert kls[-20:].mean() < kls[:20].mean()


# LLMR

def test_llmr_two_outcome_expectation(ab):
    student = order0(ab, (0.0, 0.0))
    teacher = order0(ab, (1.0, 0.0), trainable=False)
    g0 = llmr_path_gradient(student, teacher, (), (0,))
    g1 = llmr_path_gradient(student, teacher, (), (1,))
    assert np.allclose(g0.values[0], [0.5, -0.5]) and np.allclose(g1.values[0], [0.0, 0.0])
    expected = g0 * 0.5 + g1 * 0.5
    assert np.allclose(expected.values[0], [0.25, -0.25], atol=1e-15)
    exact = exact_policy_gradient(student, teacher, (), 1)
    assert np.allclose(exact.values[0], [0.25, -0.25], atol=1e-15)
    assert exact_expected_reward(student, teacher, (), 1) == pytest.approx(0.5, abs=1e-15)


def test_llmr_step_returns_scored_trajectory(ab):
    student = order0(ab, (0.0, 0.0))
    teacher = order0(ab, (1.0, 0.0), trainable=False)
    g, tr = llmr_step(student, teacher, (), TrainConfig(max_len=1), np.random.default_rng(0))
    ref = llmr_path_gradient(student, teacher, (), tr.tokens)
    assert grads_close(g, ref, rtol=0, atol=0)
    assert tr.total == (1.0 if tr.tokens == (0,) else 0.0)


def test_uniform_teacher_gives_zero_llmr_gradient():
    vocab = toy_vocab(4, eos=True)
    student = random_policy(vocab, 1, np.random.default_rng(0))
    teacher = TabularPolicy(vocab, 2, trainable=False)
    for seed in range(10):
        g, tr = llmr_step(student, teacher, (1,), TrainConfig(max_len=6), np.random.default_rng(seed))
        assert g.max_abs() == 0.0 and tr.total == 0.0


@given(seeds)
def test_expected_llmr_gradient_is_exact_policy_gradient(seed):
    _, teacher, student, cond, T = random_instance(np.random.default_rng(seed), 3, 3)
    a = expected_llmr_gradient(student, teacher, cond, T)
    b = exact_policy_gradient(student, teacher, cond, T)
    assert grads_close(a, b, rtol=1e-8, atol=1e-12)


@given(seeds, st.floats(-3, 3))
def test_baseline_leaves_expected_gradient_unchanged(seed, b):
    _, teacher, student, cond, T = random_instance(np.random.default_rng(seed), 3, 3)
    a = expected_llmr_gradient(student, teacher, cond, T, baseline=0.0)
    c = expected_llmr_gradient(student, teacher, cond, T, baseline=b)
    assert grads_close(a, c, rtol=1e-9, atol=1e-12)


def test_llmr_training_raises_expected_reward(ab):
    student = order0(ab, (0.0, 0.0))
    teacher = order0(ab, (1.0, 0.0), trainable=False)
    start = exact_expected_reward(student, teacher, (), 1)
    rep = run_training(student, teacher, [()], TrainConfig(method="LLMR", steps=200, batch_size=8,
                                                           learning_rate=0.1, max_len=1))
    ma = np.convolve(rep.rewards(), np.ones(20) / 20, mode="valid")
    assert ma[-1] > ma[0]
    assert np.all(np.diff(ma[::20]) > -0.15)
    assert exact_expected_reward(student, teacher, (), 1) > start


@pytest.mark.parametrize("baseline", [False, True])
def test_llmr_training_improves_reward_on_synthetic_teacher(baseline):
    _, teacher, student, inputs = small_pair(7)
    cfg = TrainConfig(method="LLMR", steps=400, learning_rate=0.3, max_len=8, baseline_enabled=baseline)
    rep = run_training(student, teacher, inputs, cfg)
    r = rep.rewards()
    assert r[-50:].mean() > r[:50].mean()


# the shared loop

@pytest.mark.parametrize("method", METHODS)
def test_training_is_deterministic_and_finite(method):
    _, teacher, student, inputs = small_pair(8)
    cfg = TrainConfig(method=method, steps=30, learning_rate=0.2, max_len=8, seed=11, baseline_enabled=True)
    a, b = student.copy(), student.copy()
    ra = run_training(a, teacher, inputs, cfg, inputs[:3])
    rb = run_training(b, teacher, inputs, cfg, inputs[:3])
    assert ra.to_jsonl() == rb.to_jsonl() and a.same_values(b)
    assert len(ra.records) == 30
    assert np.all(np.isfinite(a.weights))
    assert np.all(np.isfinite(ra.objectives())) and np.all(np.isfinite(ra.probe_kls()))


def test_report_jsonl_has_one_record_per_step():
    _, teacher, student, inputs = small_pair(9)
    rep = run_training(student, teacher, inputs, TrainConfig(method="LLMR", steps=4))
    lines = rep.to_jsonl({"seed": 1}).splitlines()
    assert len(lines) == 4 and all('"seed": 1' in line and '"method": "LLMR"' in line for line in lines)


def test_enumerated_outcomes_cover_llmr_samples():
    # every path the trainer can sample is one the oracle enumerates
    vocab = toy_vocab(3, eos=True)
    student = random_policy(vocab, 1, np.random.default_rng(0))
    paths = set(enumerate_sequences(vocab, 3, eos_allowed=True))
    for seed in range(50):
        _, tr = llmr_step(student, student.copy(trainable=False), (), TrainConfig(max_len=3),
                          np.random.default_rng(seed))
        assert tr.tokens in paths
