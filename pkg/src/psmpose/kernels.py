"""Hot loops, backed by the compiled ``_kernels`` extension when available.

The backend is chosen once at import. Set ``PSMPOSE_PURE_PYTHON=1`` to force
the numpy fallback. ``BACKEND`` reports which one is active.
"""

import os

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if not os.environ.get("PSMPOSE_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def dedup_mask(values, labels, eps, impl=None):
    """Keep-mask for the streaming dedup rule (compare against last kept sample)."""
    values = _f64(values).reshape(len(values), -1)
    return np.asarray((impl or _impl).dedup_mask(values, _i64(labels), float(eps)), dtype=bool)


def persistent_onset(above, t, hold_s, impl=None):
    """Index where the first run of ``above`` lasting ``hold_s`` seconds begins, or -1."""
    above = np.ascontiguousarray(above, dtype=np.uint8)
    return int((impl or _impl).persistent_onset(above, _f64(t), float(hold_s)))


def nearest_join(ta, tb, max_gap, impl=None):
    """For each time in ``ta`` the index of the nearest ``tb`` within ``max_gap``, else -1."""
    return np.asarray((impl or _impl).nearest_join(_f64(ta), _f64(tb), float(max_gap)), dtype=np.int64)


def nearest_instant(t, period, impl=None):
    """Indices of frames nearest to each whole multiple of ``period``; no repeats."""
    return np.asarray((impl or _impl).nearest_instant(_f64(t), float(period)), dtype=np.int64)


def gini_scan(x_sorted, y_sorted, n_classes, min_leaf, impl=None):
    pos, score = (impl or _impl).gini_scan(_f64(x_sorted), _i64(y_sorted), int(n_classes), int(min_leaf))
    return int(pos), float(score)


def bilinear_resize(src, out_r, out_c, impl=None):
    """Corner-aligned bilinear resize of a 2-D array."""
    if out_r < 1 or out_c < 1:
        raise ValueError(f"target size must be positive, got {out_r}x{out_c}")
    src = _f64(src)
    if src.ndim != 2 or src.size == 0:
        raise ValueError(f"expected non-empty 2-D array, got shape {src.shape}")
    return np.asarray((impl or _impl).bilinear_resize(src, int(out_r), int(out_c)))
