"""Compiled sifting loop.

Mirrors ``find_extrema`` / ``spline_envelope`` / ``local_mean`` from
:mod:`windcast.iceemdan` exactly; those stay the readable reference and the
test oracle for these kernels.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def extrema(x):
    n = x.size
    maxima = np.empty(n, dtype=np.int64)
    minima = np.empty(n, dtype=np.int64)
    n_max = 0
    n_min = 0
    if n < 3:
        return maxima[:0], minima[:0]
    # runs of equal values: previous run value, current run [start, end]
    prev_val = x[0]
    start = 1
    while start < n and x[start] == prev_val:
        start += 1
    if start >= n:
        return maxima[:0], minima[:0]
    while start < n:
        end = start
        v = x[start]
        while end + 1 < n and x[end + 1] == v:
            end += 1
        if end + 1 >= n:
            break
        nxt = x[end + 1]
        if v > prev_val and v > nxt:
            maxima[n_max] = (start + end) // 2
            n_max += 1
        elif v < prev_val and v < nxt:
            minima[n_min] = (start + end) // 2
            n_min += 1
        prev_val = v
        start = end + 1
    return maxima[:n_max], minima[:n_min]


@njit(cache=True)
def envelope(x, knots, out):
    """Natural cubic spline through ``x[knots]`` with end mirroring, written into ``out``."""
    n = x.size
    k = knots.size
    left = 2 if knots[0] > 0 else 0
    right = 2 if knots[k - 1] < n - 1 else 0
    m = k + left + right
    pos = np.empty(m)
    val = np.empty(m)
    j = 0
    if left:
        pos[0] = -float(knots[1])
        val[0] = x[knots[1]]
        pos[1] = -float(knots[0])
        val[1] = x[knots[0]]
        j = 2
    for i in range(k):
        pos[j] = float(knots[i])
        val[j] = x[knots[i]]
        j += 1
    if right:
        pos[j] = 2.0 * (n - 1) - knots[k - 1]
        val[j] = x[knots[k - 1]]
        pos[j + 1] = 2.0 * (n - 1) - knots[k - 2]
        val[j + 1] = x[knots[k - 2]]

    h = np.empty(m - 1)
    for i in range(m - 1):
        h[i] = pos[i + 1] - pos[i]
    second = np.zeros(m)
    if m > 2:
        # Thomas algorithm on the interior second derivatives
        size = m - 2
        cp = np.empty(size)
        dp = np.empty(size)
        for i in range(size):
            a = h[i]
            b = 2.0 * (h[i] + h[i + 1])
            c = h[i + 1]
            d = 6.0 * ((val[i + 2] - val[i + 1]) / h[i + 1] - (val[i + 1] - val[i]) / h[i])
            if i > 0:
                denom = b - a * cp[i - 1]
                cp[i] = c / denom
                dp[i] = (d - a * dp[i - 1]) / denom
            else:
                cp[i] = c / b
                dp[i] = d / b
        second[size] = dp[size - 1]
        for i in range(size - 2, -1, -1):
            second[i + 1] = dp[i] - cp[i] * second[i + 2]

    seg = 0
    for t in range(n):
        tf = float(t)
        while seg < m - 2 and pos[seg + 1] <= tf:
            seg += 1
        hi = h[seg]
        a = pos[seg + 1] - tf
        b = tf - pos[seg]
        out[t] = (
            (second[seg] * a * a * a + second[seg + 1] * b * b * b) / (6.0 * hi)
            + (val[seg] / hi - second[seg] * hi / 6.0) * a
            + (val[seg + 1] / hi - second[seg + 1] * hi / 6.0) * b
        )


@njit(cache=True)
def local_mean(x, out):
    """Write the envelope mean of ``x`` into ``out``; returns False (and copies ``x``) if not oscillating."""
    maxima, minima = extrema(x)
    if maxima.size < 2 or minima.size < 2:
        out[:] = x
        return False
    upper = np.empty(x.size)
    envelope(x, maxima, upper)
    envelope(x, minima, out)
    for i in range(x.size):
        out[i] = 0.5 * (upper[i] + out[i])
    return True


@njit(cache=True)
def sift(x, max_iters, tolerance, trace):
    """Sift ``x``; returns ``(imf, passes)``. ``trace`` receives the change of each pass."""
    h = x.copy()
    mean = np.empty(x.size)
    passes = 0
    for _ in range(max_iters):
        if not local_mean(h, mean):
            break
        num = 0.0
        den = 0.0
        for i in range(h.size):
            num += mean[i] * mean[i]
            den += h[i] * h[i]
            h[i] -= mean[i]
        change = num / den if den > 0.0 else 0.0
        trace[passes] = change
        passes += 1
        if change < tolerance:
            break
    return h, passes
