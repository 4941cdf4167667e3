"""Clock synchronization: Upper/Lower offset from bed entry, section compositing,
biocalibration localization and annotation-log alignment."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from ._io import load_arrays, save_arrays, write_json
from .data import (
    AnnotationLog,
    DaqStream,
    FrameSeries,
    NightRecording,
    NormMode,
    PsmFormatError,
    read_log_csv,
    write_log_csv,
)


class NoOccupancy(RuntimeError):
    def __init__(self, what: str = "stream"):
        super().__init__(f"no sustained occupancy found in {what}")
        self.what = what


class EmptyOverlap(RuntimeError):
    pass


@dataclass(frozen=True)
class SyncParams:
    occupancy_threshold: float = 0.05
    hold_s: float = 10.0
    join_max_gap_s: float = 0.2
    resp_band_hz: tuple[float, float] = (0.1, 0.5)
    biocal_window_s: float = 1800.0
    sample_rate_hz: float = 10.0

    def __post_init__(self):
        if self.occupancy_threshold <= 0 or self.hold_s <= 0 or self.join_max_gap_s <= 0:
            raise ValueError("thresholds must be positive")
        lo, hi = self.resp_band_hz
        if not 0 < lo < hi < self.sample_rate_hz / 2:
            raise ValueError(f"need 0 < low < high < Nyquist, got band {self.resp_band_hz}")
        if self.biocal_window_s <= 0:
            raise ValueError("biocal_window_s must be positive")


def _mean_pressure(stream) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(stream, DaqStream):
        vals = stream.normalized(NormMode.LENIENT)
    else:
        vals = np.asarray(stream.values, dtype=np.float64)
    return np.asarray(stream.timestamps), vals.reshape(len(vals), -1).mean(axis=1)


def detect_bed_entry(stream, p: SyncParams = SyncParams()) -> float:
    """Earliest time the mean section pressure stays above threshold for ``hold_s``."""
    t, m = _mean_pressure(stream)
    i = kernels.persistent_onset(m > p.occupancy_threshold, t, p.hold_s)
    if i < 0:
        name = stream.section.value if isinstance(stream, DaqStream) else "frames"
        raise NoOccupancy(name)
    return float(t[i])


def estimate_stream_offset(upper, lower, p: SyncParams = SyncParams()) -> float:
    """Lower-clock minus Upper-clock time of the shared bed-entry event.

    Subtracting this offset from Lower timestamps puts them on the Upper clock.
    """
    return detect_bed_entry(lower, p) - detect_bed_entry(upper, p)


def composite_streams(
    upper: DaqStream,
    lower: DaqStream,
    offset_s: float,
    p: SyncParams = SyncParams(),
    mode: NormMode | str = NormMode.STRICT,
) -> FrameSeries:
    """Stack each Upper frame over its nearest Lower frame (Upper rows first)."""
    if len(upper) == 0 or len(lower) == 0:
        raise EmptyOverlap("one of the streams is empty")
    t_lower = np.asarray(lower.timestamps) - offset_s
    idx = kernels.nearest_join(upper.timestamps, t_lower, p.join_max_gap_s)
    keep = idx >= 0
    if not keep.any():
        raise EmptyOverlap(f"no Upper/Lower frame pairs within {p.join_max_gap_s} s")
    up = upper.normalized(mode)[keep]
    lo = lower.normalized(mode)[idx[keep]]
    return FrameSeries(np.asarray(upper.timestamps)[keep], np.concatenate([up, lo], axis=1))


@dataclass(frozen=True)
class BiocalDetection:
    time_s: float
    argmax_time_s: float
    peak: float
    median: float
    low_confidence: bool


def _moving_average(x: np.ndarray, w: int) -> np.ndarray:
    """'valid'-mode moving average, output aligned to window centres."""
    c = np.concatenate(([0.0], np.cumsum(x)))
    return (c[w:] - c[:-w]) / w


def occupancy_window(frames: FrameSeries, p: SyncParams = SyncParams()) -> tuple[int, int]:
    t, m = _mean_pressure(frames)
    above = m > p.occupancy_threshold
    start = kernels.persistent_onset(above, t, p.hold_s)
    if start < 0:
        raise NoOccupancy("frames")
    end = len(above) - 1 - int(np.argmax(above[::-1]))
    return start, end


def respiratory_envelope(frames: FrameSeries, p: SyncParams = SyncParams()) -> tuple[np.ndarray, np.ndarray]:
    """RMS envelope of the band-limited total-pressure signal over the occupancy window.

    Detrend with a 1/low-cut moving average, smooth with a 1/high-cut moving
    average, then take RMS over ``hold_s`` windows. Returns (centre_times, envelope).
    """
    start, end = occupancy_window(frames, p)
    t = frames.timestamps[start : end + 1]
    total = frames.values[start : end + 1].reshape(end + 1 - start, -1).sum(axis=1)
    dt = float(np.median(np.diff(t))) if len(t) > 1 else 1.0 / p.sample_rate_hz
    lo, hi = p.resp_band_hz
    w_lo = max(1, int(round(1.0 / lo / dt)))
    w_hi = max(1, int(round(1.0 / hi / dt)))
    w_env = max(1, int(round(p.hold_s / dt)))
    if len(total) < w_lo + w_hi + w_env:
        raise NoOccupancy("frames (occupancy window shorter than filter support)")
    trend = _moving_average(total, w_lo)
    off = (w_lo - 1) // 2
    detrended = total[off : off + len(trend)] - trend
    band = _moving_average(detrended, w_hi)
    off += (w_hi - 1) // 2
    env = np.sqrt(_moving_average(band * band, w_env))
    off += (w_env - 1) // 2
    return t[off : off + len(env)], env


def detect_biocalibration(
    frames: FrameSeries, p: SyncParams = SyncParams(), hint_s: float | None = None
) -> BiocalDetection:
    """Locate the biocalibration maneuver as the peak of the respiratory envelope.

    The argmax window is refined to the midpoint of the contiguous region where
    the envelope stays above half way between its median and its peak, which
    centres the estimate on a flat-topped maneuver instead of an arbitrary point
    on its plateau. ``low_confidence`` is set when the peak is under twice the median.
    """
    times, env = respiratory_envelope(frames, p)
    median = float(np.median(env))
    cand = np.ones(len(env), dtype=bool)
    if hint_s is not None:
        cand = np.abs(times - hint_s) <= p.biocal_window_s
        if not cand.any():
            cand[:] = True
    masked = np.where(cand, env, -np.inf)
    i = int(np.argmax(masked))
    peak = float(env[i])
    level = median + 0.5 * (peak - median)
    lo = i
    while lo > 0 and cand[lo - 1] and env[lo - 1] >= level:
        lo -= 1
    hi = i
    while hi + 1 < len(env) and cand[hi + 1] and env[hi + 1] >= level:
        hi += 1
    scale = float(np.abs(frames.values).sum(axis=(1, 2)).mean()) if len(frames) else 1.0
    low = peak <= 2.0 * median or peak <= 1e-9 * max(1.0, scale)
    return BiocalDetection(float(0.5 * (times[lo] + times[hi])), float(times[i]), peak, median, bool(low))


def align_annotations(log: AnnotationLog, biocal_psm_s: float) -> AnnotationLog:
    """Shift the whole log so its biocalibration lands on ``biocal_psm_s``."""
    return log.shifted(float(biocal_psm_s) - log.biocal_time_s)


@dataclass(frozen=True, eq=False)
class AlignedNight:
    patient_id: str
    frames: FrameSeries
    offset_s: float
    log_shift_s: float  # log clock minus PSM clock
    log: AnnotationLog  # already on the PSM clock
    biocal: BiocalDetection | None = None

    def write(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        save_arrays(path / "aligned.npz", {"t": self.frames.timestamps, "values": self.frames.values})
        write_log_csv(path / "aligned_log.csv", self.log, exact=True)
        meta = {
            "format_version": 1,
            "patient_id": self.patient_id,
            "offset_s": self.offset_s,
            "log_shift_s": self.log_shift_s,
        }
        if self.biocal is not None:
            meta["biocal"] = {
                "time_s": self.biocal.time_s,
                "argmax_time_s": self.biocal.argmax_time_s,
                "peak": self.biocal.peak,
                "median": self.biocal.median,
                "low_confidence": self.biocal.low_confidence,
            }
        write_json(path / "sync.json", meta)

    @classmethod
    def read(cls, path: str | os.PathLike) -> "AlignedNight":
        import json

        path = Path(path)
        try:
            meta = json.loads((path / "sync.json").read_text())
        except FileNotFoundError:
            raise PsmFormatError(f"{path}: missing sync.json") from None
        if meta.get("format_version") != 1:
            raise PsmFormatError(f"{path}/sync.json: unsupported format_version {meta.get('format_version')!r}")
        arrays, _ = load_arrays(path / "aligned.npz")
        biocal = BiocalDetection(**meta["biocal"]) if "biocal" in meta else None
        return cls(
            meta["patient_id"],
            FrameSeries(arrays["t"], arrays["values"]),
            meta["offset_s"],
            meta["log_shift_s"],
            read_log_csv(path / "aligned_log.csv"),
            biocal,
        )


def sync_night(rec: NightRecording, p: SyncParams = SyncParams()) -> AlignedNight:
    """Full synchronization of one recording onto the Upper (PSM) clock."""
    offset = estimate_stream_offset(rec.upper, rec.lower, p)
    frames = composite_streams(rec.upper, rec.lower, offset, p)
    det = detect_biocalibration(frames, p, hint_s=rec.log.biocal_time_s)
    log = align_annotations(rec.log, det.time_s)
    return AlignedNight(rec.patient_id, frames, offset, rec.log.biocal_time_s - det.time_s, log, det)
