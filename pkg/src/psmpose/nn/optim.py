from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyper(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
        }


def adamw_step(params: dict[str, Tensor], state: OptimizerState) -> None:
    """One AdamW update, in place, with decay decoupled from the moment estimates."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adamw_step: no gradient for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"adamw_step: moment shape {m.shape} != parameter {name} shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * p.data
        p.data -= state.learning_rate * update


def zero_grad(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
