"""Differentiable kernels.

Broadcasting is limited to leading axes: the smaller operand's shape must be a
suffix of the larger one's (a bias over a batch, positional embeddings over a
batch of token sequences).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor, make_node


def _suffix_shape(big: tuple, small: tuple, what: str) -> None:
    if len(small) > len(big) or big[len(big) - len(small) :] != small:
        raise ValueError(f"{what}: shapes {big} and {small} are not compatible (only leading-axis broadcast)")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim >= b.ndim:
        _suffix_shape(a.shape, b.shape, "add")
    else:
        _suffix_shape(b.shape, a.shape, "add")
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim >= b.ndim:
        _suffix_shape(a.shape, b.shape, "mul")
    else:
        _suffix_shape(b.shape, a.shape, "mul")
    sa, sb = a.shape, b.shape
    return make_node(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, sa), _reduce_to(g * a.data, sb)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    """``(..., n, k) @ (k, m)`` or batched ``(..., n, k) @ (..., k, m)`` with equal batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ, shapes {a.shape} and {b.shape}")
    if b.ndim > a.ndim:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k, m = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def sum_(a: Tensor, axis=None) -> Tensor:
    src = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return make_node(np.asarray(a.data.sum(axis=axis)), (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum_(a, axis), 1.0 / n)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return make_node(a.data * pos, (a,), lambda g: (g * pos,), "relu")


_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return make_node(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (max-subtracted)."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_node(y, (a,), backward, "softmax")


def layer_norm(a: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature affine."""
    x = a.data
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm: affine shapes {weight.shape}, {bias.shape} do not match features {d}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * weight.data + bias.data

    def backward(g):
        gw = (g * xhat).reshape(-1, d).sum(axis=0)
        gb = g.reshape(-1, d).sum(axis=0)
        gx_hat = g * weight.data
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb

    return make_node(out, (a, weight, bias), backward, "layer_norm")


def embedding_add(tokens: Tensor, pos: Tensor) -> Tensor:
    """Add per-position embeddings ``(N, D)`` to every sequence in ``(B, N, D)``."""
    if tokens.shape[-2:] != pos.shape:
        raise ValueError(f"embedding_add: tokens {tokens.shape} vs embeddings {pos.shape}")
    return add(tokens, pos)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return make_node(
        np.concatenate([p.data for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def select(a: Tensor, index: int, axis: int) -> Tensor:
    """``a.take(index, axis)`` dropping that axis."""
    src, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(src, dtype=dtype)
        sl = [slice(None)] * len(src)
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)

    return make_node(np.take(a.data, index, axis=axis), (a,), backward, "select")


def expand_batch(a: Tensor, batch: int) -> Tensor:
    """Repeat ``a`` along a new leading axis of size ``batch``."""
    return make_node(
        np.broadcast_to(a.data, (batch, *a.shape)).copy(), (a,), lambda g: (g.sum(axis=0),), "expand_batch"
    )


def gather_tokens(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-sequence token gather: ``(B, N, D)``, ``idx (B, M)`` -> ``(B, M, D)``."""
    idx = np.asarray(idx, dtype=np.int64)
    B = x.shape[0]
    if idx.ndim != 2 or idx.shape[0] != B:
        raise ValueError(f"gather_tokens: index shape {idx.shape} vs tokens {x.shape}")
    rows = np.arange(B)[:, None]
    src, dtype = x.shape, x.dtype

    def backward(g):
        out = np.zeros(src, dtype=dtype)
        np.add.at(out, (rows, idx), g)
        return (out,)

    return make_node(x.data[rows, idx], (x,), backward, "gather_tokens")


def scatter_tokens(x: Tensor, idx: np.ndarray, length: int, fill: Tensor) -> Tensor:
    """Place ``(B, M, D)`` tokens at ``idx`` in a length-``length`` sequence; ``fill (D,)`` elsewhere."""
    idx = np.asarray(idx, dtype=np.int64)
    B, M, D = x.shape
    if fill.shape != (D,):
        raise ValueError(f"scatter_tokens: fill shape {fill.shape} vs token dim {D}")
    rows = np.arange(B)[:, None]
    out = np.empty((B, length, D), dtype=np.result_type(x.dtype, fill.dtype))
    out[:] = fill.data
    out[rows, idx] = x.data
    filled = np.ones((B, length), dtype=bool)
    filled[rows, idx] = False

    def backward(g):
        return g[rows, idx], g[filled].sum(axis=0)

    return make_node(out, (x, fill), backward, "scatter_tokens")


def causal_unfold(x: Tensor, kernel_size: int) -> Tensor:
    """``(B, T, C)`` -> ``(B, T, K*C)``: step t sees frames t-K+1..t, zeros before the start."""
    B, T, C = x.shape
    K = int(kernel_size)
    padded = np.concatenate([np.zeros((B, K - 1, C), dtype=x.dtype), x.data], axis=1)
    out = np.stack([padded[:, k : k + T] for k in range(K)], axis=2).reshape(B, T, K * C)

    def backward(g):
        g = g.reshape(B, T, K, C)
        gp = np.zeros((B, T + K - 1, C), dtype=g.dtype)
        for k in range(K):
            gp[:, k : k + T] += g[:, :, k]
        return (gp[:, K - 1 :],)

    return make_node(out, (x,), backward, "causal_unfold")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)
