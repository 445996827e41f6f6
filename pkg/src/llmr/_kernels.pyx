# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log
from libc.stdint cimport int64_t

cnp.import_array()

cdef enum:
    KIND_KL = 0
    KIND_RKL = 1
    KIND_JS = 2


cdef inline double _log_softmax(const double[:, ::1] w, Py_ssize_t c, double* out) noexcept nogil:
    cdef Py_ssize_t V = w.shape[1]
    cdef Py_ssize_t j
    cdef double m = w[c, 0]
    cdef double s = 0.0
    for j in range(1, V):
        if w[c, j] > m:
            m = w[c, j]
    for j in range(V):
        s += exp(w[c, j] - m)
    s = m + log(s)
    for j in range(V):
        out[j] = w[c, j] - s
    return s


def sample_paths(const double[:, ::1] weights, int64_t n_ctx, int64_t radix,
                 const int64_t[::1] start_ctx, const double[:, ::1] uniforms, int64_t eos):
    cdef Py_ssize_t B = uniforms.shape[0]
    cdef Py_ssize_t L = uniforms.shape[1]
    cdef Py_ssize_t V = weights.shape[1]
    tokens_arr = np.full((B, L), -1, dtype=np.int64)
    lengths_arr = np.zeros(B, dtype=np.int64)
    e_arr = np.empty(V, dtype=np.float64)
    cdef int64_t[:, ::1] tokens = tokens_arr
    cdef int64_t[::1] lengths = lengths_arr
    cdef double[::1] e = e_arr
    cdef Py_ssize_t b, t, j
    cdef int64_t ctx, tok
    cdef double m, s, thr, acc
    with nogil:
        for b in range(B):
            ctx = start_ctx[b]
            for t in range(L):
                m = weights[ctx, 0]
                for j in range(1, V):
                    if weights[ctx, j] > m:
                        m = weights[ctx, j]
                s = 0.0
                for j in range(V):
                    e[j] = exp(weights[ctx, j] - m)
                    s += e[j]
                thr = uniforms[b, t] * s
                acc = 0.0
                tok = -1
                for j in range(V):
                    acc += e[j]
                    if acc > thr:
                        tok = j
                        break
                if tok < 0:
                    for j in range(V - 1, -1, -1):
                        if e[j] > 0.0:
                            tok = j
                            break
                tokens[b, t] = tok
                lengths[b] += 1
                ctx = (ctx * radix + tok) % n_ctx
                if tok == eos:
                    break
    return tokens_arr, lengths_arr


def path_contexts(const int64_t[:, ::1] tokens, const int64_t[::1] lengths,
                  const int64_t[::1] start_ctx, int64_t radix, int64_t n_ctx):
    cdef Py_ssize_t B = tokens.shape[0]
    cdef Py_ssize_t L = tokens.shape[1]
    out_arr = np.full((B, L), -1, dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t b, t
    cdef int64_t ctx
    with nogil:
        for b in range(B):
            ctx = start_ctx[b]
            for t in range(lengths[b]):
                out[b, t] = ctx
                ctx = (ctx * radix + tokens[b, t]) % n_ctx
    return out_arr


def logprob_grad(const double[:, ::1] weights, const int64_t[:, ::1] ctx,
                 const int64_t[:, ::1] tokens, const int64_t[::1] lengths,
                 const double[:, ::1] coef, double[:, ::1] grad, unsigned char[::1] visited):
    cdef Py_ssize_t B = tokens.shape[0]
    cdef Py_ssize_t V = weights.shape[1]
    logp_arr = np.zeros(B, dtype=np.float64)
    buf_arr = np.empty(V, dtype=np.float64)
    cdef double[::1] logp = logp_arr
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t b, t, j
    cdef int64_t c, y
    cdef double w
    with nogil:
        for b in range(B):
            for t in range(lengths[b]):
                c = ctx[b, t]
                y = tokens[b, t]
                w = coef[b, t]
                _log_softmax(weights, c, &buf[0])
                for j in range(V):
                    grad[c, j] += -w * exp(buf[j])
                grad[c, y] += w
                visited[c] = 1
                logp[b] += buf[y]
    return logp_arr


def fdiv_grad(const double[:, ::1] student_w, const double[:, ::1] teacher_w,
              const int64_t[:, ::1] s_ctx, const int64_t[:, ::1] t_ctx, const int64_t[::1] lengths,
              int kind, double scale, double[:, ::1] grad, unsigned char[::1] visited):
    cdef Py_ssize_t B = s_ctx.shape[0]
    cdef Py_ssize_t V = student_w.shape[1]
    out_arr = np.zeros(B, dtype=np.float64)
    lp_arr = np.empty(V, dtype=np.float64)
    lq_arr = np.empty(V, dtype=np.float64)
    h_arr = np.empty(V, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] lp = lp_arr
    cdef double[::1] lq = lq_arr
    cdef double[::1] h = h_arr
    cdef Py_ssize_t b, t, j
    cdef int64_t sc, tc
    cdef double d, p, q, lm, hq, a, bb
    with nogil:
        for b in range(B):
            for t in range(lengths[b]):
                sc = s_ctx[b, t]
                tc = t_ctx[b, t]
                _log_softmax(teacher_w, tc, &lp[0])
                _log_softmax(student_w, sc, &lq[0])
                d = 0.0
                if kind == KIND_KL:
                    for j in range(V):
                        p = exp(lp[j])
                        d += p * (lp[j] - lq[j])
                    for j in range(V):
                        grad[sc, j] += -scale * (exp(lq[j]) - exp(lp[j]))
                elif kind == KIND_RKL:
                    for j in range(V):
                        q = exp(lq[j])
                        d += q * (lq[j] - lp[j])
                    for j in range(V):
                        q = exp(lq[j])
                        grad[sc, j] += -scale * q * (lq[j] - lp[j] - d)
                else:
                    hq = 0.0
                    for j in range(V):
                        p = exp(lp[j])
                        q = exp(lq[j])
                        # log((p + q) / 2) via a stable logaddexp
                        if lp[j] > lq[j]:
                            a = lp[j]
                            bb = lq[j]
                        else:
                            a = lq[j]
                            bb = lp[j]
                        lm = a + log(1.0 + exp(bb - a)) - 0.6931471805599453
                        d += 0.5 * (p * (lp[j] - lm) + q * (lq[j] - lm))
                        h[j] = 0.5 * (lq[j] - lm)
                        hq += q * h[j]
                    for j in range(V):
                        q = exp(lq[j])
                        grad[sc, j] += -scale * q * (h[j] - hq)
                visited[sc] = 1
                out[b] += d
    return out_arr


def kl_positions(const double[:, ::1] teacher_w, const double[:, ::1] student_w,
                 const int64_t[:, ::1] t_ctx, const int64_t[:, ::1] s_ctx, const int64_t[::1] lengths):
    cdef Py_ssize_t B = s_ctx.shape[0]
    cdef Py_ssize_t L = s_ctx.shape[1]
    cdef Py_ssize_t V = student_w.shape[1]
    out_arr = np.zeros((B, L), dtype=np.float64)
    lp_arr = np.empty(V, dtype=np.float64)
    lq_arr = np.empty(V, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] lp = lp_arr
    cdef double[::1] lq = lq_arr
    cdef Py_ssize_t b, t, j
    cdef double d
    with nogil:
        for b in range(B):
            for t in range(lengths[b]):
                _log_softmax(teacher_w, t_ctx[b, t], &lp[0])
                _log_softmax(student_w, s_ctx[b, t], &lq[0])
                d = 0.0
                for j in range(V):
                    d += exp(lp[j]) * (lp[j] - lq[j])
                out[b, t] = d
    return out_arr
