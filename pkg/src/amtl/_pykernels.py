"""Pure-Python reference kernels.

Loop structure and floating-point operation order mirror ``_ckernels.pyx``
exactly, so both backends agree to the last bit on the same libm.
"""
from math import exp, inf, log1p

import numpy as np


def _lse(a, b):
    if a == -inf:
        return b
    if b == -inf:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def ctc_forward_backward(log_probs, target, blank):
    """Negative log-likelihood of ``target`` under CTC and its gradient.

    ``log_probs`` is a (T, V) float64 array, ``target`` an int sequence
    without blanks. Returns ``(nll, grad)`` where ``grad`` is the derivative
    of ``nll`` with respect to every entry of ``log_probs``. An infeasible
    target yields ``(inf, zeros)``.
    """
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    T, V = lp.shape
    rows = lp.tolist()
    tgt = [int(t) for t in target]
    L = len(tgt)
    S = 2 * L + 1
    ext = [blank] * S
    for i in range(L):
        ext[2 * i + 1] = tgt[i]
    skip = [False] * S
    for s in range(2, S):
        skip[s] = ext[s] != blank and ext[s] != ext[s - 2]

    alpha = [[-inf] * S for _ in range(T)]
    alpha[0][0] = rows[0][ext[0]]
    if S > 1:
        alpha[0][1] = rows[0][ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        cur = alpha[t]
        row = rows[t]
        for s in range(S):
            a = prev[s]
            if s >= 1:
                a = _lse(a, prev[s - 1])
            if skip[s]:
                a = _lse(a, prev[s - 2])
            if a != -inf:
                cur[s] = a + row[ext[s]]

    logp = alpha[T - 1][S - 1]
    if S > 1:
        logp = _lse(logp, alpha[T - 1][S - 2])
    grad = np.zeros((T, V), dtype=np.float64)
    if logp == -inf:
        return inf, grad

    # beta[t][s]: log-prob of completing the target from state s at frame t,
    # excluding the emission at t itself.
    beta = [[-inf] * S for _ in range(T)]
    beta[T - 1][S - 1] = 0.0
    if S > 1:
        beta[T - 1][S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        cur = beta[t]
        row = rows[t + 1]
        for s in range(S):
            b = nxt[s] + row[ext[s]] if nxt[s] != -inf else -inf
            if s + 1 < S and nxt[s + 1] != -inf:
                b = _lse(b, nxt[s + 1] + row[ext[s + 1]])
            if s + 2 < S and skip[s + 2] and nxt[s + 2] != -inf:
                b = _lse(b, nxt[s + 2] + row[ext[s + 2]])
            cur[s] = b

    g = grad.tolist()
    for t in range(T):
        gt = g[t]
        at = alpha[t]
        bt = beta[t]
        for s in range(S):
            v = at[s] + bt[s]
            if v != -inf:
                gt[ext[s]] -= exp(v - logp)
    return -logp, np.array(g, dtype=np.float64).reshape(T, V)


def edit_ops(ref, hyp):
    """(substitutions, deletions, insertions) of a minimal word alignment.

    Backtrace prefers substitution/match over deletion over insertion.
    """
    r = [int(x) for x in ref]
    h = [int(x) for x in hyp]
    n, m = len(r), len(h)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = r[i - 1]
        for j in range(1, m + 1):
            best = d[i - 1][j - 1] + (0 if ri == h[j - 1] else 1)
            if d[i - 1][j] + 1 < best:
                best = d[i - 1][j] + 1
            if d[i][j - 1] + 1 < best:
                best = d[i][j - 1] + 1
            d[i][j] = best

    sub = dele = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if r[i - 1] == h[j - 1] else 1
            if d[i][j] == d[i - 1][j - 1] + cost:
                sub += cost
                i -= 1
                j -= 1
                continue
        if i > 0 and d[i][j] == d[i - 1][j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return sub, dele, ins
