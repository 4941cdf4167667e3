"""Single-block causal temporal convolutional classifier over frame windows."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import nn
from ..data import LabeledDataset
from .vit import to_tensors


@dataclass(frozen=True)
class TcnConfig:
    window_len: int = 30
    in_features: int = 324
    filters: int = 128
    kernel_size: int = 15
    hidden: int = 32
    num_classes: int = 4

    def __post_init__(self):
        if self.window_len < self.kernel_size:
            raise ValueError(f"window_len {self.window_len} shorter than kernel_size {self.kernel_size}")
        if min(self.in_features, self.filters, self.kernel_size, self.hidden, self.num_classes) < 1:
            raise ValueError("all TCN sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def init_tcn_params(cfg: TcnConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    fan_conv = cfg.kernel_size * cfg.in_features

    def he(fan_in, shape):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    return {
        "conv.weight": he(fan_conv, (fan_conv, cfg.filters)),
        "conv.bias": np.zeros(cfg.filters),
        "fc.weight": he(cfg.filters, (cfg.filters, cfg.hidden)),
        "fc.bias": np.zeros(cfg.hidden),
        "out.weight": rng.normal(0.0, np.sqrt(1.0 / cfg.hidden), size=(cfg.hidden, cfg.num_classes)),
        "out.bias": np.zeros(cfg.num_classes),
    }


def tcn_forward(cfg: TcnConfig, params, windows: np.ndarray, all_steps: bool = False) -> nn.Tensor:
    """``(B, T, F)`` windows -> logits ``(B, classes)`` read at the last step.

    With ``all_steps`` the head is applied at every step, giving ``(B, T, classes)``.
    """
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != cfg.in_features:
        raise ValueError(f"windows {x.shape} do not match in_features {cfg.in_features}")
    if x.shape[1] < cfg.kernel_size:
        raise ValueError(f"window of {x.shape[1]} frames is shorter than kernel_size {cfg.kernel_size}")
    P = to_tensors(params)
    h = nn.causal_unfold(nn.Tensor(x), cfg.kernel_size)
    h = nn.relu(nn.linear(h, P["conv.weight"], P["conv.bias"]))
    if not all_steps:
        h = nn.select(h, x.shape[1] - 1, 1)
    h = nn.relu(nn.linear(h, P["fc.weight"], P["fc.bias"]))
    return nn.linear(h, P["out.weight"], P["out.bias"])


def window_ends(ds: LabeledDataset, window_len: int) -> np.ndarray:
    """Indices of samples that close a full window within one patient's time-sorted run."""
    ends = []
    start = 0
    n = len(ds)
    for i in range(1, n + 1):
        if i == n or ds.patients[i] != ds.patients[start] or ds.timestamps[i] <= ds.timestamps[i - 1]:
            ends.extend(range(start + window_len - 1, i))
            start = i
    return np.asarray(ends, dtype=np.int64)


def gather_windows(ds: LabeledDataset, ends: np.ndarray, window_len: int) -> np.ndarray:
    flat = ds.frames.reshape(len(ds), -1)
    idx = ends[:, None] - np.arange(window_len - 1, -1, -1)[None, :]
    return flat[idx]


@dataclass(frozen=True)
class TcnHyper:
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    epochs: int = 3
    batch_size: int = 64
    seed: int = 0


def train_tcn(cfg: TcnConfig, train: LabeledDataset, hyper: TcnHyper = TcnHyper()) -> dict[str, np.ndarray]:
    ends = window_ends(train, cfg.window_len)
    if len(ends) == 0:
        raise ValueError("no complete windows in training set")
    rng = np.random.default_rng(hyper.seed)
    params = to_tensors(init_tcn_params(cfg, hyper.seed), requires_grad=True)
    state = nn.OptimizerState(hyper.learning_rate, hyper.weight_decay)
    for _ in range(hyper.epochs):
        order = rng.permutation(ends)
        for lo in range(0, len(order), hyper.batch_size):
            batch = order[lo : lo + hyper.batch_size]
            nn.zero_grad(params)
            loss = nn.cross_entropy(tcn_forward(cfg, params, gather_windows(train, batch, cfg.window_len)), train.labels[batch])
            loss.backward()
            nn.adamw_step(params, state)
    return {k: p.data.copy() for k, p in params.items()}


def predict_tcn(cfg: TcnConfig, params, ds: LabeledDataset, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Predictions for every sample that closes a full window; returns (indices, labels)."""
    ends = window_ends(ds, cfg.window_len)
    preds = []
    with nn.no_grad():
        for lo in range(0, len(ends), batch_size):
            batch = ends[lo : lo + batch_size]
            preds.append(tcn_forward(cfg, params, gather_windows(ds, batch, cfg.window_len)).data.argmax(axis=1))
    return ends, (np.concatenate(preds) if preds else np.zeros(0, np.int64))
