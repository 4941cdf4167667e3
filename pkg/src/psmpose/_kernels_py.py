"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and results; used when the extension is not built or when
``PSMPOSE_PURE_PYTHON=1`` is set.
"""

import numpy as np


def dedup_mask(values, labels, eps):
    n = values.shape[0]
    keep = np.zeros(n, dtype=np.uint8)
    if n == 0:
        return keep
    s = values.shape[1]
    keep[0] = 1
    last = 0
    for i in range(1, n):
        if labels[i] != labels[last]:
            keep[i] = 1
            last = i
            continue
        if np.abs(values[i] - values[last]).sum() / s >= eps:
            keep[i] = 1
            last = i
    return keep


def persistent_onset(above, t, hold_s):
    above = np.asarray(above, dtype=bool)
    if not above.any():
        return -1
    padded = np.concatenate(([False], above, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2] - 1
    ok = t[ends] - t[starts] >= hold_s - 1e-9
    if not ok.any():
        return -1
    return int(starts[np.argmax(ok)])


def _nearest(tb, targets):
    j = np.maximum(np.searchsorted(tb, targets, side="right") - 1, 0)
    nxt = np.minimum(j + 1, len(tb) - 1)
    better = (nxt != j) & (np.abs(tb[nxt] - targets) < np.abs(targets - tb[j]))
    return np.where(better, nxt, j)


def nearest_join(ta, tb, max_gap):
    out = np.full(len(ta), -1, dtype=np.int64)
    if len(tb) == 0 or len(ta) == 0:
        return out
    best = _nearest(tb, ta)
    ok = np.abs(ta - tb[best]) <= max_gap
    out[ok] = best[ok]
    return out


def nearest_instant(t, period):
    n = len(t)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    k0 = int(np.ceil(t[0] / period - 1e-9))
    k1 = int(np.floor(t[n - 1] / period + 1e-9))
    targets = np.arange(k0, k1 + 1, dtype=np.int64) * period
    best = _nearest(t, targets)
    if len(best) == 0:
        return best.astype(np.int64)
    keep = np.ones(len(best), dtype=bool)
    keep[1:] = best[1:] != best[:-1]
    return best[keep].astype(np.int64)


def gini_scan(x, y, n_classes, min_leaf):
    n = len(x)
    if n < 2:
        return -1, float("-inf")
    onehot = np.zeros((n, n_classes), dtype=np.int64)
    onehot[np.arange(n), y] = 1
    left = np.cumsum(onehot, axis=0)[:-1]
    right = left[-1] + onehot[-1] - left
    n_left = np.arange(1, n, dtype=np.int64)
    n_right = n - n_left
    score = (left * left).sum(axis=1) / n_left + (right * right).sum(axis=1) / n_right
    valid = (n_left >= min_leaf) & (n_right >= min_leaf) & (x[:-1] != x[1:])
    if not valid.any():
        return -1, float("-inf")
    score = np.where(valid, score, -1.0)
    pos = int(np.argmax(score))
    return pos, float(score[pos])


def bilinear_resize(src, out_r, out_c):
    r, c = src.shape

    def axis(n_out, n_in):
        if n_out > 1:
            pos = (np.arange(n_out) * (n_in - 1)) / (n_out - 1)
        else:
            pos = np.zeros(1)
        lo = np.floor(pos).astype(np.int64)
        lo = np.minimum(lo, n_in - 2 if n_in > 1 else 0)
        hi = lo + 1 if n_in > 1 else lo
        return lo, hi, pos - lo

    y0, y1, wy = axis(out_r, r)
    x0, x1, wx = axis(out_c, c)
    wy = wy[:, None]
    wx = wx[None, :]
    top = (1.0 - wx) * src[y0][:, x0] + wx * src[y0][:, x1]
    bot = (1.0 - wx) * src[y1][:, x0] + wx * src[y1][:, x1]
    return (1.0 - wy) * top + wy * bot
