"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 64] [--max-len 16] [--repeat 20]

Both backends get identical inputs; outputs are compared before timing.
"""
import argparse
import time

import numpy as np

from llmr import kernels
from llmr.distill import TrainConfig, run_training
from llmr.harness.data import synthetic_markov
from llmr.policy import TabularPolicy


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--vocab", type=int, default=12)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--max-len", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-steps", type=int, default=2000)
    args = ap.parse_args()

    if not kernels.HAVE_COMPILED:
        print("compiled extension not built; only the python backend is available")
        return

    vocab, teacher, inputs = synthetic_markov(args.vocab, 2, args.seed)
    student = TabularPolicy(vocab, 1)
    rng = np.random.default_rng(args.seed)
    student.weights[:] = rng.normal(size=student.weights.shape)
    radix = vocab.radix
    conds = [inputs[i % len(inputs)] for i in range(args.batch)]
    t_start = np.array([teacher.context_index(c) for c in conds], dtype=np.int64)
    s_start = np.array([student.context_index(c) for c in conds], dtype=np.int64)
    uniforms = rng.random((args.batch, args.max_len))
    eos = vocab.eos

    tokens, lengths = kernels.sample_paths(teacher.weights, teacher.n_ctx, radix, t_start, uniforms, eos)
    t_ctx = kernels.path_contexts(tokens, lengths, t_start, radix, teacher.n_ctx)
    s_ctx = kernels.path_contexts(tokens, lengths, s_start, radix, student.n_ctx)
    coef = rng.normal(size=tokens.shape)

    def grad_buffers():
        return np.zeros_like(student.weights), np.zeros(student.n_ctx, dtype=bool)

    cases = {
        "sample_paths": lambda b: kernels.sample_paths(teacher.weights, teacher.n_ctx, radix, t_start,
                                                       uniforms, eos, backend=b),
        "path_contexts": lambda b: kernels.path_contexts(tokens, lengths, t_start, radix, teacher.n_ctx,
                                                         backend=b),
        "logprob_grad": lambda b: kernels.logprob_grad(student.weights, s_ctx, tokens, lengths, coef,
                                                       *grad_buffers(), backend=b),
        "fdiv_grad(JS)": lambda b: kernels.fdiv_grad(student.weights, teacher.weights, s_ctx, t_ctx, lengths,
                                                     kernels.KIND_JS, 1.0, *grad_buffers(), backend=b),
        "kl_positions": lambda b: kernels.kl_positions(teacher.weights, student.weights, t_ctx, s_ctx,
                                                       lengths, backend=b),
    }

    print(f"batch={args.batch} max_len={args.max_len} V={vocab.size} best of {args.repeat}")
    print(f"{'kernel':16s} {'python (ms)':>12s} {'compiled (ms)':>14s} {'speedup':>8s}")
    for name, fn in cases.items():
        a, b = fn("python"), fn("compiled")
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
        tp = best_of(lambda: fn("python"), args.repeat)
        tc = best_of(lambda: fn("compiled"), args.repeat)
        print(f"{name:16s} {tp * 1e3:12.3f} {tc * 1e3:14.3f} {tp / tc:7.1f}x")

    # whole training loop; the default backend is switched module-wide
    cfg = TrainConfig(method="LLMR", steps=args.train_steps, batch_size=16, learning_rate=0.3)
    totals = {}
    for backend in ("python", "compiled"):
        kernels.BACKEND = backend
        s = student.copy()
        t0 = time.perf_counter()
        run_training(s, teacher, inputs, cfg)
        totals[backend] = (time.perf_counter() - t0, s)
    assert np.allclose(totals["python"][1].weights, totals["compiled"][1].weights, rtol=1e-9, atol=1e-9)
    tp, tc = totals["python"][0], totals["compiled"][0]
    print(f"{'LLMR training':16s} {tp * 1e3:12.1f} {tc * 1e3:14.1f} {tp / tc:7.1f}x  ({args.train_steps} steps)")


if __name__ == "__main__":
    main()
