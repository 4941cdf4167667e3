"""Masked-autoencoder pre-training of the ViT encoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import nn
from ..nn import Tensor
from .vit import ViTConfig, _block_params, block, encode, init_vit_params, patchify, prepare_images, take_rows, to_tensors


@dataclass(frozen=True)
class MAEConfig:
    mask_ratio: float = 0.75
    decoder_dim: int = 32
    decoder_depth: int = 1
    decoder_heads: int = 4

    def __post_init__(self):
        if not 0 < self.mask_ratio < 1:
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.decoder_dim % self.decoder_heads:
            raise ValueError("decoder_dim must be divisible by decoder_heads")

    def mask_count(self, num_patches: int) -> int:
        """round-half-up(mask_ratio * num_patches), required to leave >= 1 visible and >= 1 masked."""
        k = int(np.floor(self.mask_ratio * num_patches + 0.5))
        if not 1 <= k <= num_patches - 1:
            raise ValueError(f"mask count {k} out of [1, {num_patches - 1}] for {num_patches} patches")
        return k

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PretrainHyper:
    learning_rate: float = 1.5e-3
    weight_decay: float = 0.05
    steps: int = 300
    batch_size: int = 32
    seed: int = 0


def init_decoder_params(config: ViTConfig, mcfg: MAEConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    dd = mcfg.decoder_dim
    params = {
        "decoder.embed.weight": nn.trunc_normal(rng, (config.embed_dim, dd)),
        "decoder.embed.bias": np.zeros(dd),
        "decoder.mask_token": nn.trunc_normal(rng, (dd,)),
        "decoder.pos_embed": nn.trunc_normal(rng, (config.num_patches + 1, dd)),
        "decoder.norm.weight": np.ones(dd),
        "decoder.norm.bias": np.zeros(dd),
        "decoder.pred.weight": nn.trunc_normal(rng, (dd, config.patch_dim)),
        "decoder.pred.bias": np.zeros(config.patch_dim),
    }
    for i in range(mcfg.decoder_depth):
        params.update(_block_params(rng, f"decoder.blocks.{i}.", dd, 4 * dd))
    return params


def random_masking(rng: np.random.Generator, batch: int, num_patches: int, mask_count: int):
    """Per-sample uniform mask without replacement -> (visible index (B, N-k) sorted, mask (B, N))."""
    mask = np.zeros((batch, num_patches), dtype=bool)
    keep = np.empty((batch, num_patches - mask_count), dtype=np.int64)
    for b in range(batch):
        perm = rng.permutation(num_patches)
        mask[b, perm[:mask_count]] = True
        keep[b] = np.sort(perm[mask_count:])
    return keep, mask


def mae_forward(config: ViTConfig, mcfg: MAEConfig, params, images: np.ndarray, keep_idx: np.ndarray, mask: np.ndarray):
    """Returns (loss, reconstructed patches (B, N, patch_dim), encoder token count)."""
    P = to_tensors(params)
    B = images.shape[0]
    N = config.num_patches
    if keep_idx.shape != (B, N - int(mask[0].sum())):
        raise ValueError("visible index does not match mask")
    latent = encode(config, P, images, keep_idx)
    n_enc = latent.shape[1]
    y = nn.linear(latent, P["decoder.embed.weight"], P["decoder.embed.bias"])
    M = y.shape[1] - 1
    tr = nn.transpose(y, (1, 0, 2))  # (1+M, B, Dd)
    cls_d = nn.transpose(_take_axis0(tr, [0]), (1, 0, 2))
    vis = nn.transpose(_take_axis0(tr, np.arange(1, M + 1)), (1, 0, 2))
    full = nn.scatter_tokens(vis, keep_idx, N, P["decoder.mask_token"])
    seq = nn.embedding_add(nn.concat([cls_d, full], axis=1), P["decoder.pos_embed"])
    for i in range(mcfg.decoder_depth):
        seq = block(P, f"decoder.blocks.{i}.", seq, mcfg.decoder_heads, config.ln_eps)
    seq = nn.layer_norm(seq, P["decoder.norm.weight"], P["decoder.norm.bias"], config.ln_eps)
    pred = nn.linear(seq, P["decoder.pred.weight"], P["decoder.pred.bias"])
    pred = nn.transpose(_take_axis0(nn.transpose(pred, (1, 0, 2)), np.arange(1, N + 1)), (1, 0, 2))
    target = patchify(images, config.patch_size, config.in_channels)
    return nn.masked_mse(pred, target, mask), pred, n_enc


def _take_axis0(a: Tensor, rows) -> Tensor:
    lead = a.shape[0]
    rest = a.shape[1:]
    flat = nn.reshape(a, (lead, int(np.prod(rest))))
    return nn.reshape(take_rows(flat, rows), (len(rows), *rest))


def encoder_params(params: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v.data if isinstance(v, Tensor) else v) for k, v in params.items() if not k.startswith(("decoder.", "head."))}


def mae_pretrain(
    config: ViTConfig,
    mcfg: MAEConfig,
    frames: np.ndarray,
    hyper: PretrainHyper = PretrainHyper(),
) -> nn.Checkpoint:
    """Pre-train encoder+decoder on unlabeled frames; returns the encoder checkpoint.

    The per-step loss trace is stored in ``checkpoint.meta['loss_trace']``.
    """
    images = prepare_images(frames, config)
    if len(images) == 0:
        raise ValueError("no frames to pre-train on")
    k = mcfg.mask_count(config.num_patches)
    rng = np.random.default_rng(hyper.seed)
    raw = init_vit_params(config, seed=hyper.seed, head=False)
    raw.update(init_decoder_params(config, mcfg, seed=hyper.seed))
    params = to_tensors(raw, requires_grad=True)
    state = nn.OptimizerState(hyper.learning_rate, hyper.weight_decay)
    trace = []
    for _ in range(hyper.steps):
        idx = rng.choice(len(images), size=min(hyper.batch_size, len(images)), replace=False)
        keep, mask = random_masking(rng, len(idx), config.num_patches, k)
        nn.zero_grad(params)
        loss, _, _ = mae_forward(config, mcfg, params, images[idx], keep, mask)
        loss.backward()
        nn.adamw_step(params, state)
        trace.append(float(loss.data))
    enc_config = config.with_(num_classes=0)
    return nn.Checkpoint(
        "vit-encoder",
        enc_config.to_dict(),
        encoder_params(params),
        None,
        {"loss_trace": trace, "mae": mcfg.to_dict(), "mask_count": k},
    )
