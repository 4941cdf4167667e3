"""Random forest (Gini, bootstrap, per-split feature subsampling) and a
multinomial logistic baseline trained with the autodiff optimizer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import kernels, nn


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    features_per_split: int | None = None  # None -> round(sqrt(d))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("n_trees, max_depth and min_leaf must be positive")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be positive")


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # class predicted at leaves

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass
class Forest:
    trees: list[Tree]
    n_classes: int
    n_features: int
    config: ForestConfig = field(default_factory=ForestConfig)

    def equals(self, other: "Forest") -> bool:
        if len(self.trees) != len(other.trees):
            return False
        for a, b in zip(self.trees, other.trees):
            for name in ("feature", "threshold", "left", "right", "value"):
                if not np.array_equal(getattr(a, name), getattr(b, name)):
                    return False
        return True


def _majority(y: np.ndarray, n_classes: int) -> int:
    return int(np.argmax(np.bincount(y, minlength=n_classes)))


def _grow(X, y, n_classes, cfg: ForestConfig, k: int, rng) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    d = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        counts = np.bincount(ys, minlength=n_classes)
        value[node] = int(np.argmax(counts))
        n = len(idx)
        if depth >= cfg.max_depth or n < 2 * cfg.min_leaf or counts.max() == n:
            continue
        parent_score = float((counts.astype(np.int64) ** 2).sum()) / n
        best = (parent_score + 1e-12, -1, -1, None)
        for f in rng.choice(d, size=k, replace=False):
            order = np.argsort(X[idx, f], kind="stable")
            xs = X[idx[order], f]
            pos, score = kernels.gini_scan(xs, ys[order], n_classes, cfg.min_leaf)
            if pos >= 0 and score > best[0]:
                best = (score, int(f), pos, (order, xs))
        if best[1] < 0:
            continue
        _, f, pos, (order, xs) = best
        feature[node] = f
        threshold[node] = float(xs[pos])
        l, r = new_node(), new_node()
        left[node], right[node] = l, r
        stack.append((r, idx[order[pos + 1 :]], depth + 1))
        stack.append((l, idx[order[: pos + 1]], depth + 1))
    return Tree(
        np.asarray(feature, np.int64),
        np.asarray(threshold, np.float64),
        np.asarray(left, np.int64),
        np.asarray(right, np.int64),
        np.asarray(value, np.int64),
    )


def train_forest(X, y, cfg: ForestConfig = ForestConfig(), n_classes: int | None = None) -> Forest:
    """Splits compare ``x <= threshold`` with thresholds taken from training values,
    so predictions are unchanged by any increasing transform of a feature column."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty training set")
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"features {X.shape} vs labels {y.shape}")
    n_classes = int(n_classes if n_classes is not None else y.max() + 1)
    d = X.shape[1]
    k = cfg.features_per_split or max(1, int(round(np.sqrt(d))))
    k = min(k, d)
    rng = np.random.default_rng(cfg.seed)
    trees = []
    for _ in range(cfg.n_trees):
        rows = rng.integers(0, len(y), size=len(y)) if cfg.bootstrap else np.arange(len(y))
        trees.append(_grow(X[rows], y[rows], n_classes, cfg, k, rng))
    return Forest(trees, n_classes, d, cfg)


def forest_predict(forest: Forest, X) -> np.ndarray:
    """Majority vote over trees; ties go to the lowest class index."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(f"expected (n, {forest.n_features}) features, got {X.shape}")
    votes = np.zeros((len(X), forest.n_classes), dtype=np.int64)
    rows = np.arange(len(X))
    for tree in forest.trees:
        votes[rows, tree.apply(X)] += 1
    return np.argmax(votes, axis=1)


@dataclass(frozen=True)
class LinearHyper:
    learning_rate: float = 0.05
    weight_decay: float = 0.0
    epochs: int = 200
    batch_size: int = 0  # 0 -> full batch
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LinearModel:
    mean: np.ndarray
    scale: np.ndarray
    weight: np.ndarray
    bias: np.ndarray

    def logits(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Z @ self.weight + self.bias


def train_linear(X, y, hyper: LinearHyper = LinearHyper(), n_classes: int | None = None) -> LinearModel:
    """Standardized multinomial logistic regression fitted with AdamW."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty training set")
    K = int(n_classes if n_classes is not None else y.max() + 1)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    rng = np.random.default_rng(hyper.seed)
    W = nn.Tensor(np.zeros((X.shape[1], K)), requires_grad=True)
    b = nn.Tensor(np.zeros(K), requires_grad=True)
    params = {"weight": W, "bias": b}
    state = nn.OptimizerState(hyper.learning_rate, hyper.weight_decay)
    bs = hyper.batch_size or len(y)
    for _ in range(hyper.epochs):
        order = rng.permutation(len(y))
        for lo in range(0, len(y), bs):
            idx = order[lo : lo + bs]
            nn.zero_grad(params)
            nn.cross_entropy(nn.linear(nn.Tensor(Z[idx]), W, b), y[idx]).backward()
            nn.adamw_step(params, state)
    return LinearModel(mu, sd, W.data.copy(), b.data.copy())


def linear_predict(model: LinearModel, X) -> np.ndarray:
    return np.argmax(model.logits(X), axis=1)
