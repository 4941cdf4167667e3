"""Aligned night -> labeled dataset: decimation, transient exclusion, dedup, resizing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import AnnotationLog, FrameSeries, LabeledDataset, PoseLabel, PressureFrame, SensorGeometry
from .sync import AlignedNight


@dataclass(frozen=True)
class PreprocessParams:
    target_rate_hz: float = 1.0
    transient_margin_s: float = 5.0
    dedup_epsilon: float = 0.01
    resize_target: tuple[int, int] | None = (18, 18)
    pad_target: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if self.dedup_epsilon < 0:
            raise ValueError("dedup_epsilon must be >= 0")
        if self.target_rate_hz <= 0:
            raise ValueError("target_rate_hz must be positive")
        if self.transient_margin_s < 0:
            raise ValueError("transient_margin_s must be >= 0")


def downsample(frames: FrameSeries, target_rate_hz: float) -> FrameSeries:
    """Keep the frame nearest each whole multiple of the target period."""
    if len(frames) == 0:
        return frames
    idx = kernels.nearest_instant(frames.timestamps, 1.0 / target_rate_hz)
    return frames[idx]


def transient_keep_labels(timestamps: np.ndarray, log: AnnotationLog, margin_s: float) -> np.ndarray:
    """Pose label per timestamp, or -1 where the frame must be dropped."""
    t = np.asarray(timestamps, dtype=np.float64)
    out = np.full(len(t), -1, dtype=np.int64)
    if not log.intervals or len(t) == 0:
        return out
    starts = np.array([s for s, _, _ in log.intervals])
    ends = np.array([e for _, e, _ in log.intervals])
    labs = np.array([int(lab) for _, _, lab in log.intervals])
    k = np.searchsorted(starts, t, side="right") - 1
    valid = k >= 0
    kk = np.where(valid, k, 0)
    ok = (
        valid
        & (labs[kk] != int(PoseLabel.TRANSIENT))
        & (t >= starts[kk] + margin_s)
        & (t <= ends[kk] - margin_s)
    )
    out[ok] = labs[kk][ok]
    return out


def drop_transients(frames: FrameSeries, log: AnnotationLog, margin_s: float = 5.0, patient_id: str = "") -> LabeledDataset:
    """Keep frames well inside a non-Transient interval, labeled with that interval's pose."""
    labels = transient_keep_labels(frames.timestamps, log, margin_s)
    keep = labels >= 0
    r, c = frames.values.shape[1:]
    geom = SensorGeometry(r, c, r // 2 if r >= 2 else r)
    return LabeledDataset(
        frames.values[keep], frames.timestamps[keep], labels[keep], np.full(int(keep.sum()), patient_id, object), geom
    )


def dedup(ds: LabeledDataset, epsilon: float = 0.01) -> LabeledDataset:
    """Streaming near-duplicate removal.

    A sample is kept if its mean absolute difference from the last kept sample is
    at least ``epsilon`` or its label differs. The comparison restarts at every
    patient boundary.
    """
    if len(ds) == 0:
        return ds
    keep = np.zeros(len(ds), dtype=bool)
    bounds = np.flatnonzero(ds.patients[1:] != ds.patients[:-1]) + 1
    edges = [0, *bounds.tolist(), len(ds)]
    for lo, hi in zip(edges[:-1], edges[1:]):
        keep[lo:hi] = kernels.dedup_mask(ds.frames[lo:hi].reshape(hi - lo, -1), ds.labels[lo:hi], epsilon)
    return ds.subset(keep)


def _values(frame):
    return frame.values if isinstance(frame, PressureFrame) else np.asarray(frame, dtype=np.float64)


def resize_bilinear(frame, target: tuple[int, int]):
    """Corner-aligned bilinear resize; returns the same kind it was given."""
    out_r, out_c = target
    if out_r < 1 or out_c < 1:
        raise ValueError(f"zero-sized target {target}")
    out = np.clip(kernels.bilinear_resize(_values(frame), out_r, out_c), 0.0, 1.0)
    if isinstance(frame, PressureFrame):
        return PressureFrame(frame.timestamp, out)
    return out


def resize_stack(frames: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[1:] == tuple(target):
        return frames.copy()
    out = np.empty((len(frames), *target))
    for i, f in enumerate(frames):
        out[i] = kernels.bilinear_resize(f, *target)
    return np.clip(out, 0.0, 1.0)


def pad_offsets(source: tuple[int, int], target: tuple[int, int]) -> tuple[int, int]:
    (r, c), (R, C) = source, target
    if R < r or C < c:
        raise ValueError(f"pad target {target} smaller than source {source}")
    return (R - r) // 2, (C - c) // 2


def pad_to_target(frame, target: tuple[int, int]):
    """Zero-pad around the centred source; odd remainders go bottom/right."""
    v = _values(frame)
    top, left = pad_offsets(v.shape, target)
    out = np.zeros(target, dtype=np.float64)
    out[top : top + v.shape[0], left : left + v.shape[1]] = v
    if isinstance(frame, PressureFrame):
        return PressureFrame(frame.timestamp, out)
    return out


def pad_stack(frames: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    top, left = pad_offsets(frames.shape[1:], target)
    out = np.zeros((len(frames), *target))
    out[:, top : top + frames.shape[1], left : left + frames.shape[2]] = frames
    return out


def resize_dataset(ds: LabeledDataset, target: tuple[int, int]) -> LabeledDataset:
    r = ds.geometry.rows
    sec = max(1, min(target[0], int(round(ds.geometry.section_rows * target[0] / r))))
    geom = SensorGeometry(target[0], target[1], sec)
    return LabeledDataset(resize_stack(ds.frames, target), ds.timestamps, ds.labels, ds.patients, geom)


def pad_dataset(ds: LabeledDataset, target: tuple[int, int]) -> LabeledDataset:
    top, _ = pad_offsets(ds.geometry.shape, target)
    geom = SensorGeometry(target[0], target[1], min(target[0], top + ds.geometry.section_rows))
    return LabeledDataset(pad_stack(ds.frames, target), ds.timestamps, ds.labels, ds.patients, geom)


def preprocess_night(night: AlignedNight, params: PreprocessParams = PreprocessParams()) -> LabeledDataset:
    """Downsample, drop transients, dedup and (optionally) resize one aligned night."""
    frames = downsample(night.frames, params.target_rate_hz)
    ds = drop_transients(frames, night.log, params.transient_margin_s, night.patient_id)
    ds = LabeledDataset(ds.frames, ds.timestamps, ds.labels, ds.patients, SensorGeometry.composite(*_section(night)))
    ds = dedup(ds, params.dedup_epsilon)
    if params.resize_target is not None:
        ds = resize_dataset(ds, tuple(params.resize_target))
    return ds


def _section(night: AlignedNight) -> tuple[int, int]:
    r, c = night.frames.values.shape[1:]
    return r // 2, c
