"""Minimal reverse-mode autodiff on dense numpy arrays."""

from .checkpoint import Checkpoint, CheckpointError, checksum
from .losses import cross_entropy, masked_mse
from .ops import (
    add,
    causal_unfold,
    concat,
    embedding_add,
    expand_batch,
    gather_tokens,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    scatter_tokens,
    select,
    softmax,
    sub,
    sum_,
    transpose,
)
from .optim import OptimizerState, adamw_step, zero_grad
from .tensor import Tensor, as_tensor, no_grad


def trunc_normal(rng, shape, std=0.02, dtype=None):
    """Normal(0, std) truncated to +-2 std by redrawing."""
    import numpy as np

    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype or np.float64)


def numerical_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place, restored)."""
    import numpy as np

    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g
