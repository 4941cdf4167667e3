"""Engineered per-frame features for the classical baselines."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .data import LabeledDataset, PoseLabel, PressureFrame, PsmFormatError

FEATURE_NAMES = (
    "total_pressure",
    "cop_row",
    "cop_col",
    "spread_row",
    "spread_col",
    "active_fraction",
    "lr_asymmetry",
    "upper_fraction",
    "lower_fraction",
)
ACTIVE_THRESHOLD = 0.02


def extract_batch(frames: np.ndarray, section_rows: int | None = None) -> np.ndarray:
    """Feature matrix (n, 9) for a stack of frames (n, rows, cols)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None]
    n, R, C = frames.shape
    sec = R // 2 if section_rows is None else section_rows
    rows = np.arange(R, dtype=np.float64)
    cols = np.arange(C, dtype=np.float64)
    total = frames.sum(axis=(1, 2))
    nz = total > 0
    safe = np.where(nz, total, 1.0)
    row_mass = frames.sum(axis=2)
    col_mass = frames.sum(axis=1)
    cop_r = np.where(nz, row_mass @ rows / safe, (R - 1) / 2.0)
    cop_c = np.where(nz, col_mass @ cols / safe, (C - 1) / 2.0)
    # centred (two-pass) moments; E[x^2] - E[x]^2 cancels to ~1e-14 for point masses
    var_r = (row_mass * (rows[None, :] - cop_r[:, None]) ** 2).sum(axis=1) / safe
    var_c = (col_mass * (cols[None, :] - cop_c[:, None]) ** 2).sum(axis=1) / safe
    spread_r = np.where(nz, np.sqrt(np.maximum(var_r, 0.0)), 0.0)
    spread_c = np.where(nz, np.sqrt(np.maximum(var_c, 0.0)), 0.0)
    active = (frames > ACTIVE_THRESHOLD).reshape(n, -1).mean(axis=1)
    half = C // 2
    left = col_mass[:, :half].sum(axis=1)
    right = col_mass[:, C - half :].sum(axis=1)
    asym = np.where(nz, (left - right) / safe, 0.0)
    upper = np.where(nz, row_mass[:, :sec].sum(axis=1) / safe, 0.0)
    lower = np.where(nz, row_mass[:, sec:].sum(axis=1) / safe, 0.0)
    return np.stack([total, cop_r, cop_c, spread_r, spread_c, active, asym, upper, lower], axis=1)


def extract_features(frame, section_rows: int | None = None) -> np.ndarray:
    """Nine features of one frame, in ``FEATURE_NAMES`` order.

    An all-zero frame puts the centre of pressure at the grid centre and every
    ratio feature at 0.
    """
    values = frame.values if isinstance(frame, PressureFrame) else frame
    return extract_batch(np.asarray(values)[None], section_rows)[0]


def dataset_features(ds: LabeledDataset) -> np.ndarray:
    return extract_batch(ds.frames, ds.geometry.section_rows)


def write_features(path: str | os.PathLike, ds: LabeledDataset, feats: np.ndarray | None = None) -> None:
    feats = dataset_features(ds) if feats is None else feats
    order = ", ".join(f"f{i}={name}" for i, name in enumerate(FEATURE_NAMES))
    with open(path, "w", newline="") as fh:
        fh.write(f"# feature order: {order}\n")
        fh.write(",".join(["patient", "t", "label"] + [f"f{i}" for i in range(len(FEATURE_NAMES))]) + "\n")
        for p, t, y, row in zip(ds.patients, ds.timestamps, ds.labels, feats):
            fh.write(f"{p},{float(t)!r},{PoseLabel(int(y)).title}," + ",".join(map(repr, row.tolist())) + "\n")


def read_features(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (patients, timestamps, labels, features)."""
    path = Path(path)
    patients, ts, labels, rows = [], [], [], []
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    if not lines:
        raise PsmFormatError(f"{path}: empty features file")
    expected = ["patient", "t", "label"] + [f"f{i}" for i in range(len(FEATURE_NAMES))]
    if lines[0].split(",") != expected:
        raise PsmFormatError(f"{path}: malformed header")
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(expected):
            raise PsmFormatError(f"{path}:{lineno}: expected {len(expected)} fields")
        patients.append(parts[0])
        ts.append(float(parts[1]))
        labels.append(int(PoseLabel.parse(parts[2])))
        rows.append([float(x) for x in parts[3:]])
    return (
        np.array(patients, dtype=object),
        np.array(ts),
        np.array(labels, dtype=np.int64),
        np.array(rows, dtype=np.float64).reshape(-1, len(FEATURE_NAMES)),
    )
