"""Pure numpy implementations of the hot loops.

Mirrors ``_kernels.pyx`` operation for operation. Batches are vectorized across
the batch axis; the autoregressive time loop stays in Python.

Shared conventions: ``weights`` is the dense ``(n_ctx, V)`` logit table of a
policy, contexts roll as ``ctx' = (ctx * radix + token) % n_ctx``, token and
context arrays are ``(B, L)`` with ``-1`` past each row's length.
"""
import numpy as np

KIND_KL, KIND_RKL, KIND_JS = 0, 1, 2
_LOG2 = float(np.log(2.0))


def _log_softmax(rows):
    m = rows.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(rows - m).sum(axis=1, keepdims=True))
    return rows - lse


def sample_paths(weights, n_ctx, radix, start_ctx, uniforms, eos):
    weights = np.asarray(weights, dtype=np.float64)
    uniforms = np.asarray(uniforms, dtype=np.float64)
    B, L = uniforms.shape
    V = weights.shape[1]
    tokens = np.full((B, L), -1, dtype=np.int64)
    lengths = np.zeros(B, dtype=np.int64)
    ctx = np.array(start_ctx, dtype=np.int64, copy=True)
    alive = np.ones(B, dtype=bool)
    for t in range(L):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        rows = weights[ctx[idx]]
        e = np.exp(rows - rows.max(axis=1, keepdims=True))
        cs = np.cumsum(e, axis=1)
        thr = uniforms[idx, t] * cs[:, -1]
        tok = (cs <= thr[:, None]).sum(axis=1)
        over = tok >= V
        if over.any():
            # u * total rounded up to total: take the last token with mass
            for i in np.flatnonzero(over):
                tok[i] = np.flatnonzero(e[i] > 0.0)[-1]
        tokens[idx, t] = tok
        lengths[idx] += 1
        ctx[idx] = (ctx[idx] * radix + tok) % n_ctx
        if eos >= 0:
            alive[idx[tok == eos]] = False
    return tokens, lengths


def path_contexts(tokens, lengths, start_ctx, radix, n_ctx):
    tokens = np.asarray(tokens, dtype=np.int64)
    B, L = tokens.shape
    out = np.full((B, L), -1, dtype=np.int64)
    ctx = np.array(start_ctx, dtype=np.int64, copy=True)
    for t in range(L):
        live = t < lengths
        out[live, t] = ctx[live]
        ctx[live] = (ctx[live] * radix + tokens[live, t]) % n_ctx
    return out


def logprob_grad(weights, ctx, tokens, lengths, coef, grad, visited):
    """Add ``coef[b, t] * d log q(y_t) / d z`` into ``grad``; return per-path log q(y)."""
    B, L = tokens.shape
    mask = np.arange(L)[None, :] < np.asarray(lengths)[:, None]
    b_idx = np.nonzero(mask)[0]
    c = ctx[mask]
    y = tokens[mask]
    w = np.asarray(coef, dtype=np.float64)[mask]
    logq = _log_softmax(weights[c])
    q = np.exp(logq)
    n = c.size
    g = -w[:, None] * q
    g[np.arange(n), y] += w
    np.add.at(grad, c, g)
    visited[c] = True
    logp = np.zeros(B, dtype=np.float64)
    np.add.at(logp, b_idx, logq[np.arange(n), y])
    return logp


def _divergence_and_grad(logp, logq, kind):
    p = np.exp(logp)
    q = np.exp(logq)
    if kind == KIND_KL:
        d = (p * (logp - logq)).sum(axis=1)
        dz = q - p
    elif kind == KIND_RKL:
        d = (q * (logq - logp)).sum(axis=1)
        dz = q * (logq - logp - d[:, None])
    elif kind == KIND_JS:
        logm = np.logaddexp(logp, logq) - _LOG2
        d = 0.5 * ((p * (logp - logm)).sum(axis=1) + (q * (logq - logm)).sum(axis=1))
        h = 0.5 * (logq - logm)
        dz = q * (h - (q * h).sum(axis=1, keepdims=True))
    else:
        raise ValueError(f"unknown divergence kind {kind}")
    return d, dz


def fdiv_grad(student_w, teacher_w, s_ctx, t_ctx, lengths, kind, scale, grad, visited):
    """Add ``-scale * dD/dz`` (the descent direction) into ``grad``; return per-path sum of D."""
    B, L = s_ctx.shape
    mask = np.arange(L)[None, :] < np.asarray(lengths)[:, None]
    b_idx = np.nonzero(mask)[0]
    sc = s_ctx[mask]
    tc = t_ctx[mask]
    d, dz = _divergence_and_grad(_log_softmax(teacher_w[tc]), _log_softmax(student_w[sc]), kind)
    np.add.at(grad, sc, -scale * dz)
    visited[sc] = True
    out = np.zeros(B, dtype=np.float64)
    np.add.at(out, b_idx, d)
    return out


def kl_positions(teacher_w, student_w, t_ctx, s_ctx, lengths):
    B, L = s_ctx.shape
    mask = np.arange(L)[None, :] < np.asarray(lengths)[:, None]
    logp = _log_softmax(teacher_w[t_ctx[mask]])
    logq = _log_softmax(student_w[s_ctx[mask]])
    out = np.zeros((B, L), dtype=np.float64)
    out[mask] = (np.exp(logp) * (logp - logq)).sum(axis=1)
    return out
