"""Both kernel backends must agree on identical inputs."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_policy, toy_vocab
from llmr import kernels

pytestmark = pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled extension not built")
seeds = st.integers(0, 2 ** 32 - 1)


def batch(seed, eos=True):
    rng = np.random.default_rng(seed)
    vocab = toy_vocab(int(rng.integers(2, 9)), eos=eos)
    teacher = random_policy(vocab, int(rng.integers(0, 3)), rng, trainable=False)
    student = random_policy(vocab, int(rng.integers(0, 3)), rng)
    B, L = int(rng.integers(1, 9)), int(rng.integers(1, 10))
    t_start = rng.integers(teacher.n_ctx, size=B)
    s_start = rng.integers(student.n_ctx, size=B)
    uniforms = rng.random((B, L))
    tokens, lengths = kernels.sample_paths(teacher.weights, teacher.n_ctx, vocab.radix, t_start, uniforms,
                                           vocab.eos_or_none, backend="python")
    return rng, vocab, teacher, student, t_start, s_start, uniforms, tokens, lengths


@given(seeds, st.booleans())
def test_sampling_and_contexts_agree(seed, eos):
    rng, vocab, teacher, student, t_start, s_start, uniforms, tokens, lengths = batch(seed, eos)
    tc, lc = kernels.sample_paths(teacher.weights, teacher.n_ctx, vocab.radix, t_start, uniforms,
                                  vocab.eos_or_none, backend="compiled")
    assert np.array_equal(tokens, tc) and np.array_equal(lengths, lc)
    for start, n in ((t_start, teacher.n_ctx), (s_start, student.n_ctx)):
        a = kernels.path_contexts(tokens, lengths, start, vocab.radix, n, backend="python")
        b = kernels.path_contexts(tokens, lengths, start, vocab.radix, n, backend="compiled")
        assert np.array_equal(a, b)


@given(seeds)
def test_gradient_kernels_agree(seed):
    rng, vocab, teacher, student, t_start, s_start, _, tokens, lengths = batch(seed)
    t_ctx = kernels.path_contexts(tokens, lengths, t_start, vocab.radix, teacher.n_ctx)
    s_ctx = kernels.path_contexts(tokens, lengths, s_start, vocab.radix, student.n_ctx)
    coef = rng.normal(size=tokens.shape)
    out = {}
    for backend in ("python", "compiled"):
        g = np.zeros_like(student.weights)
        v = np.zeros(student.n_ctx, dtype=bool)
        lp = kernels.logprob_grad(student.weights, s_ctx, tokens, lengths, coef, g, v, backend=backend)
        fd = {}
        for kind in (kernels.KIND_KL, kernels.KIND_RKL, kernels.KIND_JS):
            gk = np.zeros_like(student.weights)
            vk = np.zeros(student.n_ctx, dtype=bool)
            d = kernels.fdiv_grad(student.weights, teacher.weights, s_ctx, t_ctx, lengths, kind, 0.5, gk, vk,
                                  backend=backend)
            fd[kind] = (d, gk, vk)
        kl = kernels.kl_positions(teacher.weights, student.weights, t_ctx, s_ctx, lengths, backend=backend)
        out[backend] = (lp, g, v, fd, kl)
    a, b = out["python"], out["compiled"]
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-12)
    assert np.array_equal(a[2], b[2])
    for kind in a[3]:
        np.testing.assert_allclose(a[3][kind][0], b[3][kind][0], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(a[3][kind][1], b[3][kind][1], rtol=1e-12, atol=1e-12)
        assert np.array_equal(a[3][kind][2], b[3][kind][2])
    np.testing.assert_allclose(a[4], b[4], rtol=1e-12, atol=1e-12)


def test_unknown_backend_request_fails_cleanly(monkeypatch):
    monkeypatch.setattr(kernels, "_compiled", None)
    with pytest.raises(RuntimeError):
        kernels.kl_positions(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 1), dtype=np.int64),
                             np.zeros((1, 1), dtype=np.int64), np.ones(1, dtype=np.int64), backend="compiled")


def test_backend_selected_at_import():
    assert kernels.BACKEND in ("compiled", "python")
    if not kernels.FORCE_PYTHON:
        assert kernels.BACKEND == "compiled"
