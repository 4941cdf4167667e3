"""Patient-grouped cross-validation, metrics, sweeps and the transfer experiment."""

from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import features, nn
from .data import CLASS_NAMES, NUM_CLASSES, LabeledDataset
from .models import (
    FinetuneHyper,
    ForestConfig,
    HeadMode,
    LinearHyper,
    MAEConfig,
    PretrainHyper,
    TcnConfig,
    TcnHyper,
    ViTConfig,
    ViTModel,
    check_disjoint,
    desk_config,
    finetune,
    forest_predict,
    init_vit_params,
    linear_predict,
    mae_pretrain,
    predict_tcn,
    replace_head,
    train_forest,
    train_linear,
    train_tcn,
)
from .models.adapt import backbone_names
from .preprocess import pad_stack, resize_stack


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_patients: frozenset
    test_patients: frozenset

    def __post_init__(self):
        check_disjoint(self.train_patients, self.test_patients)


def make_folds(patient_ids: Sequence[str], k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Seeded shuffle then a contiguous split into ``k`` near-equal test groups."""
    ids = sorted(set(patient_ids))
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(ids):
        raise ValueError(f"k={k} folds requested but only {len(ids)} patients")
    order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    folds = []
    for i, part in enumerate(np.array_split(np.arange(len(order)), k)):
        test = frozenset(order[j] for j in part)
        folds.append(FoldSplit(i, frozenset(ids) - test, test))
    return folds


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows = truth, cols = prediction
    accuracy: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "n_samples": self.n_samples,
        }


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(len(a))
    np.divide(a, b, out=out, where=b > 0)
    return out


def evaluate(predictions, truths, num_classes: int = NUM_CLASSES) -> EvalReport:
    """Confusion matrix and summary metrics.

    A class with no predictions has precision 0, one with no truth has recall 0,
    and a class whose precision and recall are both 0 scores F1 = 0.
    """
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    true = np.asarray(truths, dtype=np.int64).ravel()
    if len(pred) != len(true):
        raise ValueError(f"{len(pred)} predictions vs {len(true)} truths")
    for name, a in (("prediction", pred), ("truth", true)):
        if len(a) and (a.min() < 0 or a.max() >= num_classes):
            raise ValueError(f"{name} labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    tp = np.diag(cm).astype(np.float64)
    precision = _safe_div(tp, cm.sum(axis=0).astype(np.float64))
    recall = _safe_div(tp, cm.sum(axis=1).astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    n = len(true)
    return EvalReport(
        cm,
        float(tp.sum() / n) if n else 0.0,
        float(f1.mean()),
        precision,
        recall,
        f1,
        n,
    )


# model families -------------------------------------------------------------

FAMILIES = ("vit", "forest", "linear", "tcn")


def vit_config_for(ds: LabeledDataset, **kw) -> ViTConfig:
    return desk_config(ds.geometry.shape, **kw)


def fit_predict(
    family: str,
    train: LabeledDataset,
    test: LabeledDataset,
    cell: dict,
    seed: int = 0,
    init: nn.Checkpoint | None = None,
):
    """Train one model family on ``train`` and predict ``test``.

    Returns ``(indices, predictions)``; indices select the test samples that were
    scored (all of them except for the windowed TCN). ``init`` seeds the ViT
    backbone from an encoder checkpoint.
    """
    check_disjoint(train.patient_ids, test.patient_ids)
    cell = dict(cell)
    everything = np.arange(len(test))
    if family == "vit":
        arch = {k: cell.pop(k) for k in ("embed_dim", "depth", "heads", "patch_size") if k in cell}
        if init is not None:
            src = ViTConfig.from_dict(init.config)
            arch = {"embed_dim": src.embed_dim, "depth": src.depth, "heads": src.heads,
                    "mlp_ratio": src.mlp_ratio, "patch_size": src.patch_size, **arch}
        cfg = vit_config_for(train, **arch)
        if init is None:
            model = ViTModel(cfg, init_vit_params(cfg, seed=seed))
        else:
            model = replace_head(init, NUM_CLASSES, HeadMode.KEEP_BACKBONE, seed=seed, target=cfg)
        ckpt, _ = finetune(model, train, None, FinetuneHyper(seed=seed, **cell))
        return everything, ViTModel.from_checkpoint(ckpt).predict(test.frames)
    if family == "forest":
        cfg = ForestConfig(seed=seed, **cell)
        forest = train_forest(features.dataset_features(train), train.labels, cfg, NUM_CLASSES)
        return everything, forest_predict(forest, features.dataset_features(test))
    if family == "linear":
        model = train_linear(features.dataset_features(train), train.labels, LinearHyper(seed=seed, **cell), NUM_CLASSES)
        return everything, linear_predict(model, features.dataset_features(test))
    if family == "tcn":
        arch = {k: cell.pop(k) for k in ("window_len", "filters", "kernel_size", "hidden") if k in cell}
        cfg = TcnConfig(in_features=int(np.prod(train.geometry.shape)), **arch)
        params = train_tcn(cfg, train, TcnHyper(seed=seed, **cell))
        return predict_tcn(cfg, params, test)
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


@dataclass
class CellResult:
    cell_index: int
    fold_index: int
    cell: dict
    report: EvalReport
    patients: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    truths: np.ndarray | None = None
    predictions: np.ndarray | None = None


@dataclass
class SweepResult:
    family: str
    best_index: int
    best_cell: dict
    mean_accuracy: list[float]
    results: list[CellResult] = field(default_factory=list)

    def best_results(self) -> list[CellResult]:
        return sorted((r for r in self.results if r.cell_index == self.best_index), key=lambda r: r.fold_index)

    def fold_reports(self, cell_index: int | None = None) -> list[EvalReport]:
        i = self.best_index if cell_index is None else cell_index
        return [r.report for r in sorted(self.results, key=lambda r: r.fold_index) if r.cell_index == i]


def expand_grid(grid: dict[str, Sequence]) -> list[dict]:
    """Cartesian product in key order; later keys vary fastest."""
    if not grid:
        return [{}]
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _run_job(args):
    family, cell_index, cell, fold, dataset, seed, init = args
    train = dataset.for_patients(fold.train_patients)
    test = dataset.for_patients(fold.test_patients)
    idx, pred = fit_predict(family, train, test, cell, seed, init)
    truth = test.labels[idx]
    return CellResult(
        cell_index, fold.fold_index, cell, evaluate(pred, truth),
        test.patients[idx], test.timestamps[idx], truth, np.asarray(pred, dtype=np.int64),
    )


def run_jobs(fn, jobs: list, n_jobs: int = 1) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n_jobs, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def sweep(
    family: str,
    grid: dict[str, Sequence] | list[dict],
    folds: Sequence[FoldSplit],
    dataset: LabeledDataset,
    seed: int = 0,
    jobs: int = 1,
    init: nn.Checkpoint | None = None,
) -> SweepResult:
    """Evaluate every grid cell on every fold; the best cell has the highest mean
    accuracy, ties going to the earliest cell."""
    cells = expand_grid(grid) if isinstance(grid, dict) else [dict(c) for c in grid]
    if not cells:
        raise ValueError("empty hyperparameter grid")
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")
    known = set(dataset.patient_ids)
    for fold in folds:
        check_disjoint(fold.train_patients, fold.test_patients)
        if not fold.test_patients & known or not fold.train_patients & known:
            raise ValueError(f"fold {fold.fold_index} has an empty train or test split")
    work = [(family, i, cell, fold, dataset, seed, init) for i, cell in enumerate(cells) for fold in folds]
    results = run_jobs(_run_job, work, jobs)
    means = []
    for i in range(len(cells)):
        means.append(float(np.mean([r.report.accuracy for r in results if r.cell_index == i])))
    best = int(np.argmax(means))  # first maximum
    return SweepResult(family, best, cells[best], means, results)


# transfer -------------------------------------------------------------------


@dataclass(frozen=True)
class TransferConfig:
    source_model: ViTConfig = ViTConfig(image_size=(64, 64), in_channels=3, patch_size=8, num_classes=0)
    target_image_size: tuple[int, int] = (24, 24)
    mae: MAEConfig = MAEConfig()
    pretrain: PretrainHyper = PretrainHyper()
    finetune: FinetuneHyper = FinetuneHyper()
    label_fraction: float = 0.1
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.label_fraction <= 1:
            raise ValueError("label_fraction must be in (0, 1]")

    @property
    def target_model(self) -> ViTConfig:
        src = self.source_model
        return ViTConfig(
            image_size=tuple(self.target_image_size),
            in_channels=1,
            patch_size=src.patch_size,
            embed_dim=src.embed_dim,
            depth=src.depth,
            heads=src.heads,
            mlp_ratio=src.mlp_ratio,
            num_classes=NUM_CLASSES,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source_model"] = self.source_model.to_dict()
        return d


@dataclass
class TransferResult:
    folds: list[FoldSplit]
    scratch: list[EvalReport]
    pretrained: list[EvalReport]
    scratch_checksum: str
    pretrained_checksum: str
    test_sizes: list[int]
    pretrain_loss: list[float]

    @property
    def scratch_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.scratch]))

    @property
    def pretrained_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.pretrained]))


def fit_frames(frames: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Pad when the frames fit inside ``size``, otherwise resize."""
    r, c = frames.shape[1:]
    if (r, c) == tuple(size):
        return frames
    if r <= size[0] and c <= size[1]:
        return pad_stack(frames, size)
    return resize_stack(frames, size)


def label_subset(ds: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Seeded random subset of ``fraction`` of the samples (at least one)."""
    if fraction >= 1:
        return ds
    n = max(1, int(round(fraction * len(ds))))
    idx = np.sort(np.random.default_rng(seed).choice(len(ds), size=n, replace=False))
    return ds.subset(idx)


def with_frames(ds: LabeledDataset, frames: np.ndarray) -> LabeledDataset:
    from .data import SensorGeometry

    r, c = frames.shape[1:]
    sec = max(1, min(r, int(round(ds.geometry.section_rows * r / ds.geometry.rows))))
    return LabeledDataset(frames, ds.timestamps, ds.labels, ds.patients, SensorGeometry(r, c, sec))


def run_transfer_experiment(
    source: LabeledDataset | np.ndarray,
    target: LabeledDataset,
    config: TransferConfig = TransferConfig(),
) -> TransferResult:
    """Scratch arm versus MAE-pretrained arm on the same folds, subsets and seeds.

    ``source`` labels are ignored; only its frames are used for pre-training.
    """
    src_frames = source.frames if isinstance(source, LabeledDataset) else np.asarray(source)
    src_frames = fit_frames(src_frames, config.source_model.image_size)
    tgt_cfg = config.target_model
    target = with_frames(target, fit_frames(target.frames, tgt_cfg.image_size))

    ckpt = mae_pretrain(config.source_model, config.mae, src_frames, config.pretrain)
    folds = make_folds(target.patient_ids, config.folds, config.seed)
    scratch, pretrained, sizes = [], [], []
    scratch_sum = pre_sum = ""
    for fold in folds:
        train = target.for_patients(fold.train_patients)
        test = target.for_patients(fold.test_patients)
        check_disjoint(train.patient_ids, test.patient_ids)
        train = label_subset(train, config.label_fraction, config.seed + fold.fold_index)
        hyper = FinetuneHyper(**{**config.finetune.to_dict(), "seed": config.seed + fold.fold_index})
        arm_a = replace_head(ckpt, NUM_CLASSES, HeadMode.REINIT, seed=hyper.seed, target=tgt_cfg)
        arm_b = replace_head(ckpt, NUM_CLASSES, HeadMode.KEEP_BACKBONE, seed=hyper.seed, target=tgt_cfg)
        if fold.fold_index == 0:
            names = backbone_names(arm_a.params)
            scratch_sum = nn.checksum(arm_a.params, names)
            pre_sum = nn.checksum(arm_b.params, names)
        for arm, out in ((arm_a, scratch), (arm_b, pretrained)):
            fitted, _ = finetune(arm, train, None, hyper)
            out.append(evaluate(ViTModel.from_checkpoint(fitted).predict(test.frames), test.labels))
        sizes.append(len(test))
    return TransferResult(folds, scratch, pretrained, scratch_sum, pre_sum, sizes, ckpt.meta["loss_trace"])


# output ---------------------------------------------------------------------


def write_results(path: str | os.PathLike, results: Sequence[CellResult]) -> None:
    """One row per (cell, fold): cell index, fold, cell params, accuracy, macro_f1."""
    keys = sorted({k for r in results for k in r.cell})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "fold", *keys, "accuracy", "macro_f1", "n_samples"])
        for r in sorted(results, key=lambda r: (r.cell_index, r.fold_index)):
            w.writerow(
                [r.cell_index, r.fold_index, *[r.cell.get(k, "") for k in keys],
                 f"{r.report.accuracy:.6f}", f"{r.report.macro_f1:.6f}", r.report.n_samples]
            )


def read_results(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("cell", "fold", "n_samples"):
            if k in row:
                row[k] = int(row[k])
        for k in ("accuracy", "macro_f1"):
            row[k] = float(row[k])
    return rows


def write_confusion(path: str | os.PathLike, confusion: np.ndarray, names: Sequence[str] = CLASS_NAMES) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, np.asarray(confusion)):
            w.writerow([name, *(int(v) for v in row)])


def read_confusion(path: str | os.PathLike) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[int(v) for v in row[1:]] for row in rows], dtype=np.int64)
