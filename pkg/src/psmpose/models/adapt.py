"""Transfer adaptation: resample positional embeddings to a new patch grid,
collapse RGB patch-embedding weights to one channel, and swap heads."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .. import kernels, nn
from .vit import ViTConfig, ViTModel, init_head, init_patch_embed, init_vit_params


class AdaptationError(ValueError):
    pass


def adapt_positional_embeddings(pos: np.ndarray, src_grid: tuple[int, int], dst_grid: tuple[int, int]) -> np.ndarray:
    """Resample an ``(r1*c1, D)`` embedding grid to ``(r2*c2, D)`` with corner-aligned bilinear.

    The class-token row must already be removed.
    """
    r1, c1 = src_grid
    r2, c2 = dst_grid
    if min(r1, c1, r2, c2) < 1:
        raise AdaptationError(f"degenerate grid {src_grid} -> {dst_grid}")
    pos = np.asarray(pos, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[0] != r1 * c1:
        raise AdaptationError(f"embeddings {pos.shape} do not match grid {src_grid}")
    if (r1, c1) == (r2, c2):
        return pos.copy()
    grid = pos.reshape(r1, c1, -1)
    out = np.empty((r2, c2, grid.shape[2]))
    for d in range(grid.shape[2]):
        out[:, :, d] = kernels.bilinear_resize(np.ascontiguousarray(grid[:, :, d]), r2, c2)
    return out.reshape(r2 * c2, -1)


def collapse_input_channels(weight: np.ndarray) -> np.ndarray:
    """``(D, 3, P)`` patch-embedding weights -> ``(D, 1, P)`` by summing channels."""
    weight = np.asarray(weight)
    if weight.ndim != 3 or weight.shape[1] != 3:
        raise AdaptationError(f"expected (out_dim, 3, patch_pixels) weights, got {weight.shape}")
    return weight.sum(axis=1, keepdims=True)


def adapt_encoder(ckpt: nn.Checkpoint, target: ViTConfig) -> dict[str, np.ndarray]:
    """Encoder params from ``ckpt`` reshaped for ``target``'s grid and channel count."""
    src = ViTConfig.from_dict(ckpt.config)
    if src.embed_dim != target.embed_dim:
        raise AdaptationError(f"incompatible embed_dim: checkpoint {src.embed_dim}, target {target.embed_dim}")
    if (src.depth, src.heads) != (target.depth, target.heads):
        raise AdaptationError("checkpoint and target differ in depth/heads")
    if src.patch_size != target.patch_size:
        raise AdaptationError(f"patch size differs: checkpoint {src.patch_size}, target {target.patch_size}")
    params = {k: np.array(v) for k, v in ckpt.params.items() if not k.startswith(("head.", "decoder."))}
    pos = params["pos_embed"]
    params["pos_embed"] = np.concatenate([pos[:1], adapt_positional_embeddings(pos[1:], src.grid, target.grid)])
    w = params["patch_embed.weight"]
    if w.shape[1] != target.in_channels:
        if w.shape[1] == 3 and target.in_channels == 1:
            params["patch_embed.weight"] = collapse_input_channels(w)
        else:
            raise AdaptationError(f"cannot adapt {w.shape[1]} input channels to {target.in_channels}")
    return params


class HeadMode(str, Enum):
    REINIT = "reinit"  # whole network freshly initialized from the seed (scratch baseline)
    KEEP_BACKBONE = "keep-backbone"  # backbone bit-exact, new head
    VITPOSE = "vitpose"  # backbone kept, patch embedding re-randomized, new head


BACKBONE_EXCLUDE = ("head.",)


def backbone_names(params: dict) -> list[str]:
    return sorted(k for k in params if not k.startswith(BACKBONE_EXCLUDE) and not k.startswith("decoder."))


def replace_head(
    ckpt: nn.Checkpoint,
    num_classes: int,
    mode: HeadMode | str = HeadMode.KEEP_BACKBONE,
    seed: int = 0,
    target: ViTConfig | None = None,
) -> ViTModel:
    """Attach a fresh ``embed_dim -> num_classes`` linear head to a checkpointed encoder.

    With ``target`` given, the encoder is first adapted to its grid/channels.
    """
    mode = HeadMode(mode)
    src = ViTConfig.from_dict(ckpt.config)
    target = (target or src).with_(num_classes=num_classes)
    if target.embed_dim != src.embed_dim:
        raise AdaptationError(f"incompatible embed_dim: checkpoint {src.embed_dim}, target {target.embed_dim}")
    if "pos_embed" in ckpt.params and ckpt.params["pos_embed"].shape[1] != src.embed_dim:
        raise AdaptationError("checkpoint embeddings disagree with its own config")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4242]))
    if mode is HeadMode.REINIT:
        return ViTModel(target, init_vit_params(target, seed=seed))
    params = adapt_encoder(ckpt, target)
    if mode is HeadMode.VITPOSE:
        params.update(init_patch_embed(target, rng))
    params.update(init_head(target, rng))
    return ViTModel(target, params)
