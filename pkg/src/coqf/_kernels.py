"""Compiled best-response kernels for the equilibrium solvers."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _qf_marginal(a, k, x):
    r = math.sqrt(x)
    t = r + k
    return a * (t / r) / (t * t + 1.0) - 1.0


@njit(cache=True)
def qf_best_responses(A, c, lower, c_max, width, steps):
    n = A.size
    s = np.sqrt(c)
    out = np.zeros(n)
    for i in range(n):
        if A[i] <= 0.0:
            continue
        k = 0.0
        for j in range(n):
            if j != i:
                k += s[j]
        if _qf_marginal(A[i], k, lower) <= 0.0:
            continue
        lo = lower
        hi = c_max
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if _qf_marginal(A[i], k, mid) > 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= width:
                break
        out[i] = 0.5 * (lo + hi)
    return out


@njit(cache=True)
def _coqf_marginal(a, x, base, rest_sum, rest, t_i, swap, live):
    F = rest_sum + x + base
    slope = 1.0
    for q in range(live.size):
        p = live[q]
        ps = swap[p]
        m = rest[p] + x * t_i[p]
        mt = rest[ps] + x * t_i[ps]
        prod = m * mt
        if prod > 0.0:
            r = math.sqrt(prod)
            F += r
            slope += mt * t_i[p] / r
    return a * slope / (F + 1.0) - 1.0


@njit(cache=True)
def coqf_best_responses(A, c, t, swap, lower, c_max, width, steps):
    """``t[i, p]`` is donor i's coefficient in pair sum p = g*G + h."""
    n, P = t.shape
    out = np.zeros(n)
    rest = np.empty(P)
    for i in range(n):
        if A[i] <= 0.0:
            continue
        rest[:] = 0.0
        rest_sum = 0.0
        for j in range(n):
            if j != i and c[j] != 0.0:
                rest_sum += c[j]
                for p in range(P):
                    rest[p] += c[j] * t[j, p]
        t_i = t[i]
        # pairs untouched by agent i are constant during its search
        base = 0.0
        count = 0
        live = np.empty(P, dtype=np.int64)
        for p in range(P):
            if t_i[p] == 0.0 and t_i[swap[p]] == 0.0:
                base += math.sqrt(rest[p] * rest[swap[p]])
            else:
                live[count] = p
                count += 1
        live = live[:count]
        if _coqf_marginal(A[i], lower, base, rest_sum, rest, t_i, swap, live) <= 0.0:
            continue
        lo = lower
        hi = c_max
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if _coqf_marginal(A[i], mid, base, rest_sum, rest, t_i, swap, live) > 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= width:
                break
        out[i] = 0.5 * (lo + hi)
    return out
