from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_node


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    B, K = logits.shape
    if B == 0:
        raise ValueError("cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"cross_entropy: labels must lie in [0, {K}), got [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / B),)

    return make_node(np.asarray(loss), (logits,), backward, "cross_entropy")


def masked_mse(pred: Tensor, target, mask) -> Tensor:
    """MSE over masked patches only.

    ``pred``/``target`` are ``(B, N, P)``, ``mask`` is boolean ``(B, N)``. Only the
    masked entries are ever read, so unmasked patches contribute neither loss
    nor gradient.
    """
    target = as_tensor(target)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape or mask.shape != pred.shape[:2]:
        raise ValueError(f"masked_mse: pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    if not mask.any():
        raise ValueError("masked_mse: mask selects no patches")
    diff = pred.data[mask] - target.data[mask]
    n = diff.size
    loss = (diff * diff).sum() / n

    def backward(g):
        gp = np.zeros_like(pred.data)
        gp[mask] = (2.0 * g / n) * diff
        return gp, -gp

    return make_node(np.asarray(loss), (pred, target), backward, "masked_mse")
