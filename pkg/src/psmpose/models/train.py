"""Supervised fine-tuning of a ViT classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import nn
from ..data import LabeledDataset
from .vit import ViTModel, prepare_images, to_tensors, vit_forward


class PatientOverlapError(ValueError):
    pass


def check_disjoint(train_patients, test_patients) -> None:
    shared = sorted(set(train_patients) & set(test_patients))
    if shared:
        raise PatientOverlapError(f"patients in both train and test: {shared[:5]}")


@dataclass(frozen=True)
class FinetuneHyper:
    learning_rate: float = 1e-3
    weight_decay: float = 0.05
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    return float((pred == truth).mean()) if len(truth) else float("nan")


def finetune(
    model: ViTModel,
    train: LabeledDataset,
    valid: LabeledDataset | None = None,
    hyper: FinetuneHyper = FinetuneHyper(),
) -> tuple[nn.Checkpoint, dict]:
    """Cross-entropy training with AdamW; returns the final-epoch checkpoint and a trace."""
    if valid is not None:
        check_disjoint(train.patient_ids, valid.patient_ids)
    if len(train) == 0:
        raise ValueError("empty training set")
    cfg = model.config
    images = prepare_images(train.frames, cfg)
    labels = train.labels
    rng = np.random.default_rng(hyper.seed)
    params = to_tensors({k: np.array(v, dtype=np.float64) for k, v in model.params.items()}, requires_grad=True)
    state = nn.OptimizerState(hyper.learning_rate, hyper.weight_decay)
    trace = {"train_loss": [], "train_accuracy": [], "valid_accuracy": []}
    for _ in range(hyper.epochs):
        order = rng.permutation(len(images))
        losses, correct = [], 0
        for lo in range(0, len(order), hyper.batch_size):
            idx = order[lo : lo + hyper.batch_size]
            nn.zero_grad(params)
            logits = vit_forward(cfg, params, images[idx])
            loss = nn.cross_entropy(logits, labels[idx])
            loss.backward()
            nn.adamw_step(params, state)
            losses.append(float(loss.data) * len(idx))
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
        trace["train_loss"].append(sum(losses) / len(images))
        trace["train_accuracy"].append(correct / len(images))
        if valid is not None and len(valid):
            fitted = ViTModel(cfg, {k: p.data for k, p in params.items()})
            trace["valid_accuracy"].append(accuracy(fitted.predict(valid.frames), valid.labels))
    final = {k: p.data.copy() for k, p in params.items()}
    ckpt = nn.Checkpoint(
        "vit-classifier", cfg.to_dict(), final, state, {"trace": trace, "hyper": hyper.to_dict()}
    )
    return ckpt, trace
