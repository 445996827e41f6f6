"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy fallback in ``_kernels_py`` is used. Setting ``LLMR_PURE_PYTHON=1``
forces the fallback. Both backends share one contract, so callers never
branch on ``BACKEND``.
"""
import os

import numpy as np

from . import _kernels_py

KIND_KL, KIND_RKL, KIND_JS = _kernels_py.KIND_KL, _kernels_py.KIND_RKL, _kernels_py.KIND_JS

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

HAVE_COMPILED = _compiled is not None
FORCE_PYTHON = os.environ.get("LLMR_PURE_PYTHON", "") in ("1", "true", "yes")
BACKEND = "compiled" if HAVE_COMPILED and not FORCE_PYTHON else "python"


def _impl(name, backend=None):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return getattr(_compiled, name)
    return getattr(_kernels_py, name)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sample_paths(weights, n_ctx, radix, start_ctx, uniforms, eos, backend=None):
    """Ancestral sampling of ``B`` paths driven by pre-drawn uniforms ``(B, L)``.

    Stops a row after ``eos`` is emitted (``eos < 0`` disables stopping).
    Returns ``(tokens, lengths)`` with ``-1`` padding.
    """
    return _impl("sample_paths", backend)(
        _f64(weights), int(n_ctx), int(radix), _i64(start_ctx), _f64(uniforms), int(eos)
    )


def path_contexts(tokens, lengths, start_ctx, radix, n_ctx, backend=None):
    return _impl("path_contexts", backend)(
        _i64(tokens), _i64(lengths), _i64(start_ctx), int(radix), int(n_ctx)
    )


def logprob_grad(weights, ctx, tokens, lengths, coef, grad, visited, backend=None):
    fn = _impl("logprob_grad", backend)
    if fn is _kernels_py.logprob_grad:
        return fn(_f64(weights), _i64(ctx), _i64(tokens), _i64(lengths), _f64(coef), grad, visited)
    return fn(_f64(weights), _i64(ctx), _i64(tokens), _i64(lengths), _f64(coef), grad,
              visited.view(np.uint8))


def fdiv_grad(student_w, teacher_w, s_ctx, t_ctx, lengths, kind, scale, grad, visited, backend=None):
    fn = _impl("fdiv_grad", backend)
    args = (_f64(student_w), _f64(teacher_w), _i64(s_ctx), _i64(t_ctx), _i64(lengths),
            int(kind), float(scale), grad)
    if fn is _kernels_py.fdiv_grad:
        return fn(*args, visited)
    return fn(*args, visited.view(np.uint8))


def kl_positions(teacher_w, student_w, t_ctx, s_ctx, lengths, backend=None):
    return _impl("kl_positions", backend)(
        _f64(teacher_w), _f64(student_w), _i64(t_ctx), _i64(s_ctx), _i64(lengths)
    )
