# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must agree bit-for-bit with ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor

cnp.import_array()


def dedup_mask(const double[:, ::1] values, const long long[::1] labels, double eps):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t s = values.shape[1]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] keep = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t i, j, last = 0
    cdef double acc
    if n == 0:
        return keep
    keep[0] = 1
    for i in range(1, n):
        if labels[i] != labels[last]:
            keep[i] = 1
            last = i
            continue
        acc = 0.0
        for j in range(s):
            acc += fabs(values[i, j] - values[last, j])
        if acc / s >= eps:
            keep[i] = 1
            last = i
    return keep


def persistent_onset(const cnp.uint8_t[::1] above, const double[::1] t, double hold_s):
    cdef Py_ssize_t n = above.shape[0]
    cdef Py_ssize_t i, start = -1
    for i in range(n):
        if above[i]:
            if start < 0:
                start = i
            if t[i] - t[start] >= hold_s - 1e-9:
                return start
        else:
            start = -1
    return -1


def nearest_join(const double[::1] ta, const double[::1] tb, double max_gap):
    cdef Py_ssize_t na = ta.shape[0]
    cdef Py_ssize_t nb = tb.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.full(na, -1, dtype=np.int64)
    cdef Py_ssize_t i, j = 0, best
    cdef double d0, d1
    if nb == 0:
        return out
    for i in range(na):
        while j + 1 < nb and tb[j + 1] <= ta[i]:
            j += 1
        best = j
        if j + 1 < nb:
            d0 = fabs(ta[i] - tb[j])
            d1 = fabs(tb[j + 1] - ta[i])
            if d1 < d0:
                best = j + 1
        if fabs(ta[i] - tb[best]) <= max_gap:
            out[i] = best
    return out


def nearest_instant(const double[::1] t, double period):
    cdef Py_ssize_t n = t.shape[0]
    cdef list picked = []
    cdef Py_ssize_t j = 0, best, last = -1
    cdef long long k, k0, k1
    cdef double target
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    k0 = <long long>np.ceil(t[0] / period - 1e-9)
    k1 = <long long>np.floor(t[n - 1] / period + 1e-9)
    for k in range(k0, k1 + 1):
        target = k * period
        while j + 1 < n and t[j + 1] <= target:
            j += 1
        best = j
        if j + 1 < n and fabs(t[j + 1] - target) < fabs(target - t[j]):
            best = j + 1
        if best != last:
            picked.append(best)
            last = best
    return np.asarray(picked, dtype=np.int64)


def gini_scan(const double[::1] x, const long long[::1] y, int n_classes, Py_ssize_t min_leaf):
    """Best split position on presorted ``x``; returns (pos, score) or (-1, -inf)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, c
    cdef cnp.ndarray[cnp.int64_t, ndim=1] left_arr = np.zeros(n_classes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] right_arr = np.zeros(n_classes, dtype=np.int64)
    cdef long long[::1] left = left_arr
    cdef long long[::1] right = right_arr
    cdef long long sq_left = 0, sq_right = 0, yi
    cdef double score, best = -1.0
    cdef Py_ssize_t best_pos = -1
    for i in range(n):
        right[y[i]] += 1
    for c in range(n_classes):
        sq_right += right[c] * right[c]
    for i in range(n - 1):
        yi = y[i]
        # (c+1)^2 - c^2 = 2c + 1
        sq_left += 2 * left[yi] + 1
        left[yi] += 1
        sq_right -= 2 * right[yi] - 1
        right[yi] -= 1
        if i + 1 < min_leaf or n - i - 1 < min_leaf:
            continue
        if x[i] == x[i + 1]:
            continue
        score = (<double>sq_left) / (i + 1) + (<double>sq_right) / (n - i - 1)
        if score > best:
            best = score
            best_pos = i
    if best_pos < 0:
        return -1, float("-inf")
    return best_pos, best


def bilinear_resize(const double[:, ::1] src, Py_ssize_t out_r, Py_ssize_t out_c):
    cdef Py_ssize_t r = src.shape[0]
    cdef Py_ssize_t c = src.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.empty((out_r, out_c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, y0, x0, y1, x1
    cdef double y, x, wy, wx
    for i in range(out_r):
        if out_r > 1:
            y = <double>(i * (r - 1)) / (out_r - 1)
        else:
            y = 0.0
        y0 = <Py_ssize_t>floor(y)
        if y0 > r - 2:
            y0 = r - 2 if r > 1 else 0
        y1 = y0 + 1 if r > 1 else 0
        wy = y - y0
        for j in range(out_c):
            if out_c > 1:
                x = <double>(j * (c - 1)) / (out_c - 1)
            else:
                x = 0.0
            x0 = <Py_ssize_t>floor(x)
            if x0 > c - 2:
                x0 = c - 2 if c > 1 else 0
            x1 = x0 + 1 if c > 1 else 0
            wx = x - x0
            out[i, j] = ((1.0 - wy) * ((1.0 - wx) * src[y0, x0] + wx * src[y0, x1])
                         + wy * ((1.0 - wx) * src[y1, x0] + wx * src[y1, x1]))
    return out_arr
