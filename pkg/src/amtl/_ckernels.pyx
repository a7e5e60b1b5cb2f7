# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CTC forward-backward and word edit distance.

Operation order matches ``_pykernels`` so the two backends are bit-identical.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()


cdef inline double _lse(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def ctc_forward_backward(log_probs, target, Py_ssize_t blank):
    cdef double[:, ::1] lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    cdef Py_ssize_t T = lp.shape[0]
    cdef Py_ssize_t V = lp.shape[1]
    cdef cnp.int64_t[::1] tgt = np.ascontiguousarray(target, dtype=np.int64)
    cdef Py_ssize_t L = tgt.shape[0]
    cdef Py_ssize_t S = 2 * L + 1
    cdef cnp.int64_t[::1] ext = np.full(S, blank, dtype=np.int64)
    cdef cnp.uint8_t[::1] skip = np.zeros(S, dtype=np.uint8)
    cdef Py_ssize_t i, s, t
    for i in range(L):
        ext[2 * i + 1] = tgt[i]
    for s in range(2, S):
        skip[s] = ext[s] != blank and ext[s] != ext[s - 2]

    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    grad_arr = np.zeros((T, V))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double a, b, v, logp

    with nogil:
        alpha[0, 0] = lp[0, ext[0]]
        if S > 1:
            alpha[0, 1] = lp[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                a = alpha[t - 1, s]
                if s >= 1:
                    a = _lse(a, alpha[t - 1, s - 1])
                if skip[s]:
                    a = _lse(a, alpha[t - 1, s - 2])
                if a != -INFINITY:
                    alpha[t, s] = a + lp[t, ext[s]]

        logp = alpha[T - 1, S - 1]
        if S > 1:
            logp = _lse(logp, alpha[T - 1, S - 2])

    if logp == -INFINITY:
        return np.inf, grad_arr

    with nogil:
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                if beta[t + 1, s] != -INFINITY:
                    b = beta[t + 1, s] + lp[t + 1, ext[s]]
                else:
                    b = -INFINITY
                if s + 1 < S and beta[t + 1, s + 1] != -INFINITY:
                    b = _lse(b, beta[t + 1, s + 1] + lp[t + 1, ext[s + 1]])
                if s + 2 < S and skip[s + 2] and beta[t + 1, s + 2] != -INFINITY:
                    b = _lse(b, beta[t + 1, s + 2] + lp[t + 1, ext[s + 2]])
                beta[t, s] = b

        for t in range(T):
            for s in range(S):
                v = alpha[t, s] + beta[t, s]
                if v != -INFINITY:
                    grad[t, ext[s]] -= exp(v - logp)

    return -logp, grad_arr


def edit_ops(ref, hyp):
    cdef cnp.int64_t[::1] r = np.ascontiguousarray(ref, dtype=np.int64)
    cdef cnp.int64_t[::1] h = np.ascontiguousarray(hyp, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t m = h.shape[0]
    d_arr = np.zeros((n + 1, m + 1), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] d = d_arr
    cdef Py_ssize_t i, j
    cdef cnp.int64_t best, cost
    cdef long sub = 0, dele = 0, ins = 0

    with nogil:
        for i in range(n + 1):
            d[i, 0] = i
        for j in range(m + 1):
            d[0, j] = j
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                best = d[i - 1, j - 1] + (0 if r[i - 1] == h[j - 1] else 1)
                if d[i - 1, j] + 1 < best:
                    best = d[i - 1, j] + 1
                if d[i, j - 1] + 1 < best:
                    best = d[i, j - 1] + 1
                d[i, j] = best

        i = n
        j = m
        while i > 0 or j > 0:
            if i > 0 and j > 0:
                cost = 0 if r[i - 1] == h[j - 1] else 1
                if d[i, j] == d[i - 1, j - 1] + cost:
                    sub += cost
                    i -= 1
                    j -= 1
                    continue
            if i > 0 and d[i, j] == d[i - 1, j] + 1:
                dele += 1
                i -= 1
            else:
                ins += 1
                j -= 1
    return int(sub), int(dele), int(ins)
