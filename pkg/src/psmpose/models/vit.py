"""Pre-norm vision transformer over non-overlapping patches with a class token.

Parameters live in a flat ``name -> array`` dict so checkpoints, head swaps and
positional-embedding surgery are plain dict operations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .. import nn
from ..nn import Tensor


@dataclass(frozen=True)
class ViTConfig:
    image_size: tuple[int, int] = (18, 18)
    in_channels: int = 1
    patch_size: int = 6
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 4
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        h, w = self.image_size
        p = self.patch_size
        if p < 1 or h % p or w % p:
            raise ValueError(f"patch_size {p} must divide image size {self.image_size}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.in_channels < 1 or self.depth < 0 or self.num_classes < 0:
            raise ValueError("in_channels must be >= 1, depth and num_classes >= 0")

    @property
    def grid(self) -> tuple[int, int]:
        return (self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size)

    @property
    def num_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_size**2

    @property
    def mlp_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        return cls(**{**d, "image_size": tuple(d["image_size"])})

    def with_(self, **kw) -> "ViTConfig":
        return replace(self, **kw)


def desk_config(image_size=(18, 18), **kw) -> ViTConfig:
    """Default desk-scale config: patch 6 for 18x18 inputs, patch 8 otherwise."""
    patch = 6 if tuple(image_size) == (18, 18) else 8
    return ViTConfig(image_size=tuple(image_size), patch_size=kw.pop("patch_size", patch), **kw)


def _as_nchw(images: np.ndarray, channels: int) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None] if channels == 1 or x.shape[0] != channels else x[None]
    return x


def patchify(images: np.ndarray, patch_size: int, channels: int = 1) -> np.ndarray:
    """``(B, C, H, W)`` -> ``(B, N, C*p*p)``; patches row-major, each flattened (channel, row, col)."""
    x = _as_nchw(images, channels)
    B, C, H, W = x.shape
    p = patch_size
    if H % p or W % p:
        raise ValueError(f"image {H}x{W} not divisible by patch size {p}")
    gh, gw = H // p, W // p
    return x.reshape(B, C, gh, p, gw, p).transpose(0, 2, 4, 1, 3, 5).reshape(B, gh * gw, C * p * p)


def unpatchify(patches: np.ndarray, config: ViTConfig) -> np.ndarray:
    p = config.patch_size
    gh, gw = config.grid
    C = config.in_channels
    B = patches.shape[0]
    if patches.shape[1:] != (gh * gw, C * p * p):
        raise ValueError(f"patches {patches.shape[1:]} do not fit config grid {config.grid}")
    return patches.reshape(B, gh, gw, C, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(B, C, gh * p, gw * p)


def prepare_images(frames: np.ndarray, config: ViTConfig) -> np.ndarray:
    """Stack of single-channel frames -> ``(B, C, H, W)``, replicating channels if needed."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None]
    if x.shape[2:] != config.image_size:
        raise ValueError(f"frames {x.shape[2:]} do not match config image size {config.image_size}")
    if x.shape[1] != config.in_channels:
        if x.shape[1] != 1:
            raise ValueError(f"cannot map {x.shape[1]} channels to {config.in_channels}")
        x = np.repeat(x, config.in_channels, axis=1)
    return x


def _block_params(rng, prefix: str, d: int, hidden: int) -> dict[str, np.ndarray]:
    tn = nn.trunc_normal
    return {
        f"{prefix}norm1.weight": np.ones(d),
        f"{prefix}norm1.bias": np.zeros(d),
        f"{prefix}attn.qkv.weight": tn(rng, (d, 3 * d)),
        f"{prefix}attn.qkv.bias": np.zeros(3 * d),
        f"{prefix}attn.proj.weight": tn(rng, (d, d)),
        f"{prefix}attn.proj.bias": np.zeros(d),
        f"{prefix}norm2.weight": np.ones(d),
        f"{prefix}norm2.bias": np.zeros(d),
        f"{prefix}mlp.fc1.weight": tn(rng, (d, hidden)),
        f"{prefix}mlp.fc1.bias": np.zeros(hidden),
        f"{prefix}mlp.fc2.weight": tn(rng, (hidden, d)),
        f"{prefix}mlp.fc2.bias": np.zeros(d),
    }


def init_patch_embed(config: ViTConfig, rng) -> dict[str, np.ndarray]:
    d = config.embed_dim
    return {
        "patch_embed.weight": nn.trunc_normal(rng, (d, config.in_channels, config.patch_size**2)),
        "patch_embed.bias": np.zeros(d),
    }


def init_head(config: ViTConfig, rng) -> dict[str, np.ndarray]:
    return {
        "head.weight": nn.trunc_normal(rng, (config.embed_dim, config.num_classes)),
        "head.bias": np.zeros(config.num_classes),
    }


def init_vit_params(config: ViTConfig, seed: int = 0, head: bool = True) -> dict[str, np.ndarray]:
    """Seeded init: truncated normal (std 0.02) weights/embeddings, zero biases, unit LN gains."""
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    params = init_patch_embed(config, rng)
    params["cls_token"] = nn.trunc_normal(rng, (d,))
    params["pos_embed"] = nn.trunc_normal(rng, (config.num_patches + 1, d))
    for i in range(config.depth):
        params.update(_block_params(rng, f"blocks.{i}.", d, config.mlp_dim))
    params["norm.weight"] = np.ones(d)
    params["norm.bias"] = np.zeros(d)
    if head:
        params.update(init_head(config, rng))
    return params


def to_tensors(params: dict[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def attention(P: dict[str, Tensor], prefix: str, x: Tensor, heads: int) -> Tensor:
    B, N, D = x.shape
    dh = D // heads
    qkv = nn.linear(x, P[prefix + "qkv.weight"], P[prefix + "qkv.bias"])
    qkv = nn.transpose(nn.reshape(qkv, (B, N, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = (nn.select(qkv, i, 0) for i in range(3))
    scores = nn.scale(nn.matmul(q, nn.transpose(k, (0, 1, 3, 2))), dh**-0.5)
    out = nn.matmul(nn.softmax(scores), v)
    out = nn.reshape(nn.transpose(out, (0, 2, 1, 3)), (B, N, D))
    return nn.linear(out, P[prefix + "proj.weight"], P[prefix + "proj.bias"])


def block(P: dict[str, Tensor], prefix: str, x: Tensor, heads: int, eps: float) -> Tensor:
    h = nn.layer_norm(x, P[prefix + "norm1.weight"], P[prefix + "norm1.bias"], eps)
    x = nn.add(x, attention(P, prefix + "attn.", h, heads))
    h = nn.layer_norm(x, P[prefix + "norm2.weight"], P[prefix + "norm2.bias"], eps)
    h = nn.gelu(nn.linear(h, P[prefix + "mlp.fc1.weight"], P[prefix + "mlp.fc1.bias"]))
    return nn.add(x, nn.linear(h, P[prefix + "mlp.fc2.weight"], P[prefix + "mlp.fc2.bias"]))


def embed_patches(config: ViTConfig, P: dict[str, Tensor], patches: np.ndarray) -> Tensor:
    w = P["patch_embed.weight"]
    d = config.embed_dim
    if w.shape != (d, config.in_channels, config.patch_size**2):
        raise ValueError(f"patch embedding {w.shape} does not match config")
    w2 = nn.transpose(nn.reshape(w, (d, config.patch_dim)), (1, 0))
    return nn.linear(Tensor(patches), w2, P["patch_embed.bias"])


def take_rows(a: Tensor, rows) -> Tensor:
    """Rows of a 2-D tensor (differentiable)."""
    rows = np.asarray(rows, dtype=np.int64)
    src, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(src, dtype=dtype)
        np.add.at(out, rows, g)
        return (out,)

    return nn.tensor.make_node(a.data[rows], (a,), backward, "take_rows")


def encode(config: ViTConfig, P: dict[str, Tensor], images: np.ndarray, keep_idx: np.ndarray | None = None) -> Tensor:
    """Token embeddings after the final norm: ``(B, 1 + kept, D)``, class token first."""
    x_img = np.asarray(images, dtype=np.float64)
    if x_img.ndim != 4 or x_img.shape[1:] != (config.in_channels, *config.image_size):
        raise ValueError(f"images {x_img.shape} do not match config (C={config.in_channels}, {config.image_size})")
    B = x_img.shape[0]
    patches = patchify(x_img, config.patch_size, config.in_channels)
    pos = P["pos_embed"]
    if pos.shape != (config.num_patches + 1, config.embed_dim):
        raise ValueError(f"pos_embed {pos.shape} does not match grid {config.grid}")
    x = nn.embedding_add(embed_patches(config, P, patches), take_rows(pos, np.arange(1, config.num_patches + 1)))
    if keep_idx is not None:
        x = nn.gather_tokens(x, keep_idx)
    cls = nn.add(P["cls_token"], nn.select(take_rows(pos, [0]), 0, 0))
    cls = nn.reshape(nn.expand_batch(cls, B), (B, 1, config.embed_dim))
    x = nn.concat([cls, x], axis=1)
    for i in range(config.depth):
        x = block(P, f"blocks.{i}.", x, config.heads, config.ln_eps)
    return nn.layer_norm(x, P["norm.weight"], P["norm.bias"], config.ln_eps)


def vit_forward(config: ViTConfig, params, images: np.ndarray, mode: str = "classify") -> Tensor:
    """Logits ``(B, num_classes)`` from the class token, or all tokens when ``mode='encode'``."""
    P = to_tensors(params)
    tokens = encode(config, P, images)
    if mode == "encode":
        return tokens
    if mode != "classify":
        raise ValueError(f"unknown mode {mode!r}")
    if "head.weight" not in P:
        raise ValueError("parameters have no classification head")
    return nn.linear(nn.select(tokens, 0, 1), P["head.weight"], P["head.bias"])


def predict_logits(config: ViTConfig, params, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    with nn.no_grad():
        for lo in range(0, len(images), batch_size):
            out.append(vit_forward(config, params, images[lo : lo + batch_size]).data)
    if not out:
        return np.zeros((0, config.num_classes))
    return np.concatenate(out)


@dataclass
class ViTModel:
    config: ViTConfig
    params: dict[str, np.ndarray]

    def logits(self, frames: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return predict_logits(self.config, self.params, prepare_images(frames, self.config), batch_size)

    def predict(self, frames: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return np.argmax(self.logits(frames, batch_size), axis=1)

    def to_checkpoint(self, kind: str = "vit-classifier", **meta) -> nn.Checkpoint:
        return nn.Checkpoint(kind, self.config.to_dict(), dict(self.params), None, dict(meta))

    @classmethod
    def from_checkpoint(cls, ckpt: nn.Checkpoint) -> "ViTModel":
        return cls(ViTConfig.from_dict(ckpt.config), dict(ckpt.params))
