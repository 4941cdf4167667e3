"""Command-line entry point: ``psmpose <command> [options]``.

Every run writes ``run_manifest.json`` into its output directory. ``psmpose replay``
re-runs a manifest and checks that the artifacts come out byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, features, harness, nn, preprocess, synth
from ._io import sha256_file, write_json
from .data import (
    CLASS_NAMES,
    FORMAT_VERSION,
    LabeledDataset,
    PoseLabel,
    PsmFormatError,
    read_dataset,
    read_external_dataset,
    read_recording,
    write_dataset,
)
from .models import FinetuneHyper, MAEConfig, PretrainHyper, ViTConfig, mae_pretrain
from .sync import AlignedNight, SyncParams, sync_night

log = logging.getLogger("psmpose")

MANIFEST = "run_manifest.json"
DATA_DIR_ENV = "PSMPOSE_DATA_DIR"


class UsageError(Exception):
    """Bad flags or inputs, detected before any work is done (exit code 2)."""


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "psmpose-data"))


# helpers ----------------------------------------------------------------------


def _need_dir(path: Path, marker: str | None = None, what: str = "input") -> Path:
    path = Path(path)
    if not path.is_dir():
        raise UsageError(f"{what} directory not found: {path}")
    if marker and not (path / marker).exists():
        raise UsageError(f"{path}: missing {marker}")
    return path


def _need_file(path: Path, what: str = "input") -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return path


def _subdirs_with(path: Path, marker: str) -> list[Path]:
    found = sorted(p for p in Path(path).iterdir() if p.is_dir() and (p / marker).exists())
    if not found:
        raise UsageError(f"{path}: no subdirectories containing {marker}")
    return found


def _load_frames_source(path: Path) -> LabeledDataset:
    """A preprocessed dataset directory or an external frame-per-line dataset."""
    path = _need_dir(path)
    if (path / "dataset.json").exists():
        return read_dataset(path)
    if (path / "manifest.json").exists():
        return read_external_dataset(path)
    raise UsageError(f"{path}: neither dataset.json nor manifest.json found")


def _fit_dataset(ds: LabeledDataset, size) -> LabeledDataset:
    if size is None or tuple(size) == ds.geometry.shape:
        return ds
    return harness.with_frames(ds, harness.fit_frames(ds.frames, tuple(size)))


def _positive(name: str, value) -> None:
    values = value if isinstance(value, (list, tuple)) else [value]
    for v in values:
        if v is not None and v <= 0:
            raise UsageError(f"--{name} must be positive, got {v}")


def write_predictions(path: Path, results: list[harness.CellResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "patient", "t", "truth", "prediction"])
        for r in results:
            for p, t, y, q in zip(r.patients, r.timestamps, r.truths, r.predictions):
                w.writerow([r.fold_index, p, repr(float(t)), CLASS_NAMES[int(y)], CLASS_NAMES[int(q)]])


def read_predictions(path: Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    folds: dict[int, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"fold", "truth", "prediction"}
        if not need <= set(reader.fieldnames or []):
            raise PsmFormatError(f"{path}: expected columns {sorted(need)}")
        for row in reader:
            truth, pred = folds.setdefault(int(row["fold"]), ([], []))
            truth.append(int(PoseLabel.parse(row["truth"])))
            pred.append(int(PoseLabel.parse(row["prediction"])))
    return {k: (np.array(v[0]), np.array(v[1])) for k, v in sorted(folds.items())}


def _write_sweep_outputs(out: Path, res: harness.SweepResult, extra: dict) -> None:
    harness.write_results(out / "sweep.csv", res.results)
    write_predictions(out / "predictions.csv", res.best_results())
    best = {
        "family": res.family,
        "best_cell": res.best_cell,
        "best_index": res.best_index,
        "mean_accuracy": res.mean_accuracy,
        **extra,
    }
    write_json(out / "best.json", best)
    for r in res.best_results():
        log.info("fold %d: accuracy %.3f macro_f1 %.3f", r.fold_index, r.report.accuracy, r.report.macro_f1)


# commands ---------------------------------------------------------------------


def cmd_synth(args) -> None:
    _positive("patients", args.patients)
    _positive("duration", args.duration)
    out = Path(args.out)
    if args.external:
        synth.write_external(out, args.seed, n_subjects=args.patients, frames_per_pose=args.frames_per_pose)
        return
    cfg = synth.SynthConfig(
        seed=args.seed,
        n_patients=args.patients,
        night_duration_s=args.duration,
        sample_rate_hz=args.rate,
        drift_s=args.drift,
    )
    for rec, truth in synth.generate_cohort(cfg):
        synth.write_night(rec, truth, out / rec.patient_id)


def _sync_one(job):
    src, dst, params = job
    night = sync_night(read_recording(src), params)
    night.write(dst)
    b = night.biocal
    return [night.patient_id, repr(float(night.offset_s)), repr(float(night.log_shift_s)),
            "" if b is None else repr(float(b.time_s)), "" if b is None else int(b.low_confidence)]


def cmd_sync(args) -> None:
    nights = _subdirs_with(_need_dir(args.input), "meta.json")
    params = SyncParams(occupancy_threshold=args.threshold, hold_s=args.hold)
    out = Path(args.out)
    rows = harness.run_jobs(_sync_one, [(p, out / p.name, params) for p in nights], args.jobs)
    with open(out / "sync.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient", "offset_s", "log_shift_s", "biocal_s", "low_confidence"])
        w.writerows(rows)


def _preprocess_one(job):
    path, params = job
    return preprocess.preprocess_night(AlignedNight.read(path), params)


def cmd_preprocess(args) -> None:
    src = _need_dir(args.input)
    if (src / "manifest.json").exists():
        ds = read_external_dataset(src)
        if args.pad:
            ds = preprocess.pad_dataset(ds, tuple(args.pad))
    else:
        params = preprocess.PreprocessParams(
            target_rate_hz=args.rate,
            transient_margin_s=args.margin,
            dedup_epsilon=args.epsilon,
            resize_target=None if args.no_resize else tuple(args.resize),
        )
        nights = _subdirs_with(src, "sync.json")
        parts = harness.run_jobs(_preprocess_one, [(p, params) for p in nights], args.jobs)
        ds = LabeledDataset.concat(parts)
    if len(ds) == 0:
        raise RuntimeError("preprocessing produced no labeled frames")
    write_dataset(ds, args.out)
    log.info("%d samples from %d patients", len(ds), len(ds.patient_ids))


def cmd_features(args) -> None:
    ds = read_dataset(_need_dir(args.input, "dataset.json"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    features.write_features(out / "features.csv", ds)


def cmd_pretrain(args) -> None:
    _positive("steps", args.steps)
    ds = _load_frames_source(args.input)
    size = tuple(args.image_size) if args.image_size else ds.geometry.shape
    cfg = ViTConfig(
        image_size=size,
        in_channels=args.channels,
        patch_size=args.patch,
        embed_dim=args.embed,
        depth=args.depth,
        heads=args.heads,
        num_classes=0,
    )
    frames = harness.fit_frames(ds.frames, size)
    mcfg = MAEConfig(mask_ratio=args.mask_ratio)
    hyper = PretrainHyper(learning_rate=args.lr, weight_decay=args.wd, steps=args.steps, batch_size=args.batch, seed=args.seed)
    ckpt = mae_pretrain(cfg, mcfg, frames, hyper)
    out = Path(args.out)
    ckpt.save(out / "encoder.npz")
    trace = ckpt.meta["loss_trace"]
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        w.writerows([i, repr(v)] for i, v in enumerate(trace))
    log.info("pretrain loss %.5f -> %.5f", trace[0], trace[-1])


def _folds_for(ds: LabeledDataset, args) -> list[harness.FoldSplit]:
    try:
        return harness.make_folds(ds.patient_ids, args.folds, args.seed)
    except ValueError as exc:
        raise UsageError(f"--folds: {exc}") from None


def cmd_finetune(args) -> None:
    for name in ("lr", "epochs", "batch"):
        _positive(name, getattr(args, name))
    ds = read_dataset(_need_dir(args.input, "dataset.json"))
    init = nn.Checkpoint.load(_need_file(args.init, "--init")) if args.init else None
    ds = _fit_dataset(ds, args.image_size)
    grid = {"learning_rate": args.lr, "weight_decay": args.wd, "epochs": args.epochs, "batch_size": [args.batch]}
    res = harness.sweep("vit", grid, _folds_for(ds, args), ds, seed=args.seed, jobs=args.jobs, init=init)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_sweep_outputs(out, res, {"init": str(args.init) if args.init else None})
    if args.save_model:
        _save_final_vit(out / "model.npz", ds, res.best_cell, args.seed, init)


def _save_final_vit(path: Path, ds: LabeledDataset, cell: dict, seed: int, init) -> None:
    from .models import HeadMode, ViTModel, finetune, init_vit_params, replace_head

    if init is None:
        cfg = harness.vit_config_for(ds)
        model = ViTModel(cfg, init_vit_params(cfg, seed=seed))
    else:
        src = ViTConfig.from_dict(init.config)
        cfg = harness.vit_config_for(ds, embed_dim=src.embed_dim, depth=src.depth, heads=src.heads,
                                     mlp_ratio=src.mlp_ratio, patch_size=src.patch_size)
        model = replace_head(init, len(CLASS_NAMES), HeadMode.KEEP_BACKBONE, seed=seed, target=cfg)
    ckpt, _ = finetune(model, ds, None, FinetuneHyper(seed=seed, **cell))
    ckpt.save(path)


def cmd_train_baseline(args) -> None:
    ds = read_dataset(_need_dir(args.input, "dataset.json"))
    if args.model == "forest":
        _positive("trees", args.trees)
        grid = {"n_trees": args.trees, "max_depth": args.depth, "min_leaf": [args.min_leaf]}
    elif args.model == "linear":
        grid = {"learning_rate": args.lr, "weight_decay": args.wd, "epochs": args.epochs}
    else:
        grid = {"learning_rate": args.lr, "weight_decay": args.wd, "epochs": args.epochs, "window_len": [args.window]}
    res = harness.sweep(args.model, grid, _folds_for(ds, args), ds, seed=args.seed, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_sweep_outputs(out, res, {})


def cmd_eval(args) -> None:
    src = _need_dir(args.input)
    preds = read_predictions(_need_file(src / "predictions.csv"))
    best_path = src / "best.json"
    cell = json.loads(best_path.read_text())["best_cell"] if best_path.exists() else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for fold, (truth, pred) in preds.items():
        rep = harness.evaluate(pred, truth)
        results.append(harness.CellResult(0, fold, cell, rep))
        harness.write_confusion(out / f"confusion_{fold}.csv", rep.confusion)
    harness.write_results(out / "results.csv", results)
    acc = float(np.mean([r.report.accuracy for r in results]))
    f1 = float(np.mean([r.report.macro_f1 for r in results]))
    print(f"accuracy {acc:.3f}  macro_f1 {f1:.3f}  folds {len(results)}")


def cmd_transfer(args) -> None:
    source = _load_frames_source(args.source)
    target = read_dataset(_need_dir(args.target, "dataset.json"))
    src_cfg = ViTConfig(
        image_size=tuple(args.source_size),
        in_channels=args.channels,
        patch_size=args.patch,
        embed_dim=args.embed,
        depth=args.depth,
        heads=args.heads,
        num_classes=0,
    )
    cfg = harness.TransferConfig(
        source_model=src_cfg,
        target_image_size=tuple(args.target_size),
        pretrain=PretrainHyper(steps=args.steps, seed=args.seed),
        finetune=FinetuneHyper(learning_rate=args.lr, weight_decay=args.wd, epochs=args.epochs, seed=args.seed),
        label_fraction=args.label_fraction,
        folds=args.folds,
        seed=args.seed,
    )
    res = harness.run_transfer_experiment(source, target, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "fold", "accuracy", "macro_f1", "n_samples"])
        for arm, reports in (("scratch", res.scratch), ("pretrained", res.pretrained)):
            for i, rep in enumerate(reports):
                w.writerow([arm, i, f"{rep.accuracy:.6f}", f"{rep.macro_f1:.6f}", rep.n_samples])
                harness.write_confusion(out / f"confusion_{arm}_{i}.csv", rep.confusion)
    write_json(
        out / "transfer.json",
        {
            "scratch_accuracy": res.scratch_accuracy,
            "pretrained_accuracy": res.pretrained_accuracy,
            "scratch_backbone_sha256": res.scratch_checksum,
            "pretrained_backbone_sha256": res.pretrained_checksum,
        },
    )
    print(f"scratch {res.scratch_accuracy:.3f}  pretrained {res.pretrained_accuracy:.3f}")


def render_confusion_text(cm: np.ndarray, names=CLASS_NAMES) -> str:
    width = max(7, max(len(n) for n in names) + 1, len(str(int(cm.max()))) + 1 if cm.size else 1)
    lines = ["true \\ pred".ljust(width + 4) + "".join(n.rjust(width) for n in names)]
    for name, row in zip(names, cm):
        lines.append(name.ljust(width + 4) + "".join(str(int(v)).rjust(width) for v in row))
    return "\n".join(lines)


def render_confusion_svg(cm: np.ndarray, names=CLASS_NAMES, title: str = "") -> str:
    """Row-normalized heatmap as a standalone SVG document."""
    k = len(names)
    cell, left, top = 70, 90, 60
    rows = cm.sum(axis=1, keepdims=True).astype(float)
    frac = np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)
    w, h = left + k * cell + 20, top + k * cell + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">',
        f'<text x="{left}" y="20" font-size="14">{title}</text>',
        f'<text x="{left + k * cell / 2}" y="{top - 22}" text-anchor="middle">predicted</text>',
    ]
    for j, name in enumerate(names):
        parts.append(f'<text x="{left + j * cell + cell / 2}" y="{top - 6}" text-anchor="middle">{name}</text>')
    for i, name in enumerate(names):
        y = top + i * cell
        parts.append(f'<text x="{left - 6}" y="{y + cell / 2 + 4}" text-anchor="end">{name}</text>')
        for j in range(k):
            shade = int(round(255 * (1 - frac[i, j])))
            ink = "#fff" if frac[i, j] > 0.5 else "#000"
            parts.append(
                f'<rect x="{left + j * cell}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},255)" stroke="#888"/>'
            )
            parts.append(
                f'<text x="{left + j * cell + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                f'fill="{ink}">{int(cm[i, j])}</text>'
            )
    parts.append(f'<text x="{left + k * cell / 2}" y="{h - 10}" text-anchor="middle">rows: true class</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args) -> None:
    src = _need_dir(args.input, "results.csv")
    rows = harness.read_results(src / "results.csv")
    if not rows:
        raise UsageError(f"{src}/results.csv has no rows")
    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(row.get("arm", "all"), []).append(row)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text, summary = [], {}
    for name, grp in groups.items():
        acc = np.array([r["accuracy"] for r in grp])
        f1 = np.array([r["macro_f1"] for r in grp])
        summary[name] = {
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std()),
            "macro_f1_mean": float(f1.mean()),
            "macro_f1_std": float(f1.std()),
            "rows": len(grp),
        }
        text.append(f"[{name}] accuracy {acc.mean():.3f} +/- {acc.std():.3f}  "
                    f"macro_f1 {f1.mean():.3f} +/- {f1.std():.3f}  ({len(grp)} rows)")
        pattern = "confusion_[0-9]*.csv" if name == "all" else f"confusion_{name}_*.csv"
        files = sorted(src.glob(pattern))
        if files:
            cm = sum(harness.read_confusion(p) for p in files)
            text.append(render_confusion_text(cm))
            svg = out / ("confusion.svg" if name == "all" else f"confusion_{name}.svg")
            svg.write_text(render_confusion_svg(cm, title=f"{name}: {len(files)} folds"))
        text.append("")
    (out / "report.txt").write_text("\n".join(text))
    write_json(out / "summary.json", summary)
    print("\n".join(text).rstrip())


# parser -----------------------------------------------------------------------

STOCHASTIC = {"synth", "pretrain", "finetune", "train-baseline", "transfer"}


def _add_io(p, default_in: str | None, default_out: str):
    if default_in is not None:
        p.add_argument("--in", dest="input", type=Path, default=None, help=f"input directory (default $PSMPOSE_DATA_DIR/{default_in})")
    p.add_argument("--out", type=Path, default=None, help=f"output directory (default $PSMPOSE_DATA_DIR/{default_out})")
    p.set_defaults(_default_in=default_in, _default_out=default_out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psmpose", description="In-bed pose classification from pressure-mat data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic nights (or an external high-res dataset)")
    _add_io(p, None, "raw")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--patients", type=int, default=20)
    p.add_argument("--duration", type=float, default=28800.0, help="night length in seconds")
    p.add_argument("--rate", type=float, default=10.0, help="sample rate in Hz")
    p.add_argument("--drift", type=float, default=None, help="fixed inter-DAQ drift (default: random in [-5, 5] s)")
    p.add_argument("--external", action="store_true", help="write a frame-per-line external dataset instead")
    p.add_argument("--frames-per-pose", type=int, default=40)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sync", help="align DAQ streams and annotation logs")
    _add_io(p, "raw", "aligned")
    p.add_argument("--threshold", type=float, default=0.05, help="bed-entry mean-pressure threshold")
    p.add_argument("--hold", type=float, default=10.0, help="seconds the threshold must persist")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("preprocess", help="aligned nights -> labeled dataset")
    _add_io(p, "aligned", "dataset")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--margin", type=float, default=5.0)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--resize", type=int, nargs=2, default=[18, 18], metavar=("ROWS", "COLS"))
    p.add_argument("--no-resize", action="store_true")
    p.add_argument("--pad", type=int, nargs=2, default=[64, 64], metavar=("ROWS", "COLS"), help="pad target for external data")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("features", help="engineered features per frame")
    _add_io(p, "dataset", "features")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("pretrain", help="masked-autoencoder pre-training")
    _add_io(p, "external", "pretrain")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--image-size", type=int, nargs=2, default=[64, 64], metavar=("ROWS", "COLS"))
    p.add_argument("--channels", type=int, default=3, choices=(1, 3))
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--embed", type=int, default=64)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--mask-ratio", type=float, default=0.75)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1.5e-3)
    p.add_argument("--wd", type=float, default=0.05)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="patient-grouped k-fold ViT fine-tuning and sweep")
    _add_io(p, "dataset", "finetune")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--lr", type=float, nargs="+", default=[1e-3])
    p.add_argument("--wd", type=float, nargs="+", default=[0.05])
    p.add_argument("--epochs", type=int, nargs="+", default=[5])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--init", type=Path, default=None, help="encoder checkpoint to start from")
    p.add_argument("--image-size", type=int, nargs=2, default=None, metavar=("ROWS", "COLS"))
    p.add_argument("--save-model", action="store_true", help="also fit the best cell on all data")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("train-baseline", help="k-fold forest, logistic or TCN baseline")
    _add_io(p, "dataset", "baseline")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--model", choices=("forest", "linear", "tcn"), default="forest")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--trees", type=int, nargs="+", default=[100])
    p.add_argument("--depth", type=int, nargs="+", default=[12])
    p.add_argument("--min-leaf", type=int, default=2)
    p.add_argument("--lr", type=float, nargs="+", default=None)
    p.add_argument("--wd", type=float, nargs="+", default=None)
    p.add_argument("--epochs", type=int, nargs="+", default=None)
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("eval", help="per-fold metrics from predictions.csv")
    _add_io(p, "finetune", "eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="scratch vs MAE-pretrained comparison")
    p.add_argument("--source", type=Path, default=None, help="high-resolution frames (external or dataset dir)")
    p.add_argument("--target", type=Path, default=None, help="low-resolution labeled dataset dir")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(_default_in=None, _default_out="transfer")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--source-size", type=int, nargs=2, default=[64, 64])
    p.add_argument("--target-size", type=int, nargs=2, default=[24, 24])
    p.add_argument("--channels", type=int, default=3, choices=(1, 3))
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--embed", type=int, default=64)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--wd", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--label-fraction", type=float, default=0.1)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("report", help="text grid, SVG heatmap and summary from results.csv")
    _add_io(p, "eval", "report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", help="re-run a run_manifest.json and compare artifact checksums")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, default=None, help="replay into this directory (default: a fresh temp dir)")
    p.set_defaults(func=None, _default_in=None, _default_out=None)
    return parser


def _resolve_defaults(args) -> None:
    if getattr(args, "_default_out", None) and args.out is None:
        args.out = data_dir() / args._default_out
    if getattr(args, "_default_in", None) and getattr(args, "input", None) is None:
        args.input = data_dir() / args._default_in
    if args.command == "transfer":
        args.source = args.source or data_dir() / "external"
        args.target = args.target or data_dir() / "dataset"
    if args.command == "train-baseline":
        defaults = {"forest": {}, "linear": {"lr": [0.05], "wd": [0.0], "epochs": [200]},
                    "tcn": {"lr": [1e-3], "wd": [0.01], "epochs": [3]}}[args.model]
        for k, v in defaults.items():
            if getattr(args, k) is None:
                setattr(args, k, v)
    if getattr(args, "jobs", 1) < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")


def _canonical_argv(parser: argparse.ArgumentParser, args) -> list[str]:
    """Flags that reproduce ``args`` exactly, with every path made absolute."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    argv = [args.command]
    for action in sub._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        value = getattr(args, action.dest, None)
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is not None:
            values = value if isinstance(value, (list, tuple)) else [value]
            argv.append(flag)
            argv.extend(str(Path(v).resolve()) if isinstance(v, Path) else repr(v) if isinstance(v, float) else str(v)
                        for v in values)
    return argv


def _params(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k.startswith("_") or k in ("func", "verbose"):
            continue
        if isinstance(v, Path):
            v = str(v.resolve())
        elif isinstance(v, (list, tuple)):
            v = [str(x) if isinstance(x, Path) else x for x in v]
        out[k] = v
    return out


def artifact_checksums(out: Path) -> dict[str, str]:
    out = Path(out)
    return {
        str(p.relative_to(out)): sha256_file(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != MANIFEST and not p.name.startswith(".tmp-")
    }


def write_manifest(args, argv: list[str], started: float) -> dict:
    out = Path(args.out)
    inputs = [str(Path(getattr(args, k)).resolve()) for k in ("input", "source", "target", "init") if getattr(args, k, None)]
    manifest = {
        "format_version": FORMAT_VERSION,
        "psmpose_version": __version__,
        "command": args.command,
        "argv": argv,
        "params": _params(args),
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "output": str(out.resolve()),
        "checksums": artifact_checksums(out),
        "duration_s": round(time.time() - started, 3),
    }
    write_json(out / MANIFEST, manifest)
    return manifest


def run(argv: list[str], parser: argparse.ArgumentParser | None = None) -> dict:
    """Parse, execute and record one command; returns the manifest."""
    parser = parser or build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        return replay(args.manifest, args.out)
    _resolve_defaults(args)
    canonical = _canonical_argv(parser, args)
    started = time.time()
    Path(args.out).mkdir(parents=True, exist_ok=True)
    args.func(args)
    return write_manifest(args, canonical, started)


def replay(manifest_path: Path, out: Path | None = None) -> dict:
    """Re-run a manifest's command into ``out`` and compare every artifact checksum."""
    import tempfile

    manifest_path = _need_file(manifest_path, "manifest")
    try:
        recorded = json.loads(manifest_path.read_text())
        argv = list(recorded["argv"])
    except (ValueError, KeyError) as exc:
        raise PsmFormatError(f"{manifest_path}: not a run manifest ({exc})") from None
    if recorded.get("format_version") != FORMAT_VERSION:
        raise PsmFormatError(f"{manifest_path}: unsupported format_version {recorded.get('format_version')!r}")
    out = Path(out) if out is not None else Path(tempfile.mkdtemp(prefix="psmpose-replay-"))
    fresh = run(argv + ["--out", str(out)])
    expected, got = recorded["checksums"], fresh["checksums"]
    diff = sorted(k for k in set(expected) | set(got) if expected.get(k) != got.get(k))
    if diff:
        raise RuntimeError(f"replay differs in {len(diff)} artifact(s): {', '.join(diff[:10])}")
    print(f"replay ok: {len(expected)} artifacts identical ({out})")
    return fresh


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        run(argv, parser)
    except SystemExit as exc:  # argparse usage errors exit 2 already
        return int(exc.code or 0)
    except (UsageError, ValueError) as exc:  # includes format and checkpoint errors
        print(f"psmpose: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure after validation
        print(f"psmpose: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
