"""Domain types and on-disk formats for pressure-mat recordings.

Streams and datasets are stored columnar (one timestamp vector plus one
``(n, rows, cols)`` array) rather than as lists of frame objects; the
``frames`` / ``samples`` properties give per-frame views when needed.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

FULL_SCALE = 2046
FORMAT_VERSION = 1


class PsmFormatError(ValueError):
    """Malformed or inconsistent on-disk data."""


class OutOfRangeError(ValueError):
    def __init__(self, value, row, col):
        super().__init__(f"count {value} outside [0, {FULL_SCALE}] at row {row}, col {col}")
        self.value = value
        self.row = row
        self.col = col


class PoseLabel(IntEnum):
    LEFT = 0
    RIGHT = 1
    SUPINE = 2
    PRONE = 3
    TRANSIENT = 4

    @property
    def title(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, name: str) -> "PoseLabel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise PsmFormatError(f"unknown pose label {name!r}") from None


CLASS_NAMES = tuple(PoseLabel(i).title for i in range(4))
NUM_CLASSES = len(CLASS_NAMES)


class Section(str, Enum):
    UPPER = "upper"
    LOWER = "lower"


class NormMode(str, Enum):
    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class SensorGeometry:
    rows: int
    cols: int
    section_rows: int = 9

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"geometry must be at least 1x1, got {self.rows}x{self.cols}")
        if not 1 <= self.section_rows <= self.rows:
            raise ValueError(f"section_rows={self.section_rows} incompatible with rows={self.rows}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_sensels(self) -> int:
        return self.rows * self.cols

    @property
    def section_shape(self) -> tuple[int, int]:
        return (self.section_rows, self.cols)

    @classmethod
    def composite(cls, section_rows: int = 9, cols: int = 8) -> "SensorGeometry":
        return cls(2 * section_rows, cols, section_rows)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "section_rows": self.section_rows}

    @classmethod
    def from_dict(cls, d: dict) -> "SensorGeometry":
        try:
            return cls(int(d["rows"]), int(d["cols"]), int(d.get("section_rows", d["rows"])))
        except (KeyError, TypeError) as exc:
            raise PsmFormatError(f"bad geometry record {d!r}") from exc


CLINICAL = SensorGeometry.composite(9, 8)


@dataclass(frozen=True, eq=False)
class RawFrame:
    timestamp: float
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class PressureFrame:
    timestamp: float
    values: np.ndarray

    def __post_init__(self):
        if __debug__ and self.values.size:
            lo, hi = float(self.values.min()), float(self.values.max())
            assert 0.0 <= lo and hi <= 1.0, f"pressure outside [0,1]: [{lo}, {hi}]"


def normalize_counts(counts: np.ndarray, mode: NormMode | str = NormMode.STRICT) -> np.ndarray:
    """Map integer counts to [0, 1] by dividing by full scale."""
    counts = np.asarray(counts)
    if NormMode(mode) is NormMode.STRICT:
        bad = (counts < 0) | (counts > FULL_SCALE)
        if bad.any():
            idx = np.unravel_index(int(np.argmax(bad)), counts.shape)
            raise OutOfRangeError(counts[idx].item(), int(idx[-2]), int(idx[-1]))
    else:
        counts = np.clip(counts, 0, FULL_SCALE)
    return counts.astype(np.float64) / FULL_SCALE


def normalize_frame(raw: RawFrame, mode: NormMode | str = NormMode.STRICT) -> PressureFrame:
    values = np.asarray(raw.values)
    if values.ndim != 2:
        raise ValueError(f"frame must be 2-D, got shape {values.shape}")
    return PressureFrame(raw.timestamp, normalize_counts(values, mode))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _check_increasing(t: np.ndarray, what: str) -> None:
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        i = int(np.argmax(np.diff(t) <= 0))
        raise PsmFormatError(f"{what}: timestamps not strictly increasing at index {i + 1} ({t[i]} -> {t[i + 1]})")


@dataclass(frozen=True, eq=False)
class DaqStream:
    section: Section
    timestamps: np.ndarray
    counts: np.ndarray
    sample_rate_hz: float = 10.0

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        c = np.asarray(self.counts)
        if c.ndim != 3 or c.shape[0] != t.shape[0]:
            raise PsmFormatError(f"counts shape {c.shape} does not match {t.shape[0]} timestamps")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        _check_increasing(t, f"{Section(self.section).value} stream")
        object.__setattr__(self, "section", Section(self.section))
        object.__setattr__(self, "timestamps", _readonly(t))
        object.__setattr__(self, "counts", _readonly(c.astype(np.int32, copy=False)))

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape[1:]

    @property
    def frames(self) -> Iterator[RawFrame]:
        for t, v in zip(self.timestamps, self.counts):
            yield RawFrame(float(t), v)

    def normalized(self, mode: NormMode | str = NormMode.LENIENT) -> np.ndarray:
        return normalize_counts(self.counts, mode)

    def __eq__(self, other):
        if not isinstance(other, DaqStream):
            return NotImplemented
        return (
            self.section == other.section
            and self.sample_rate_hz == other.sample_rate_hz
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.counts, other.counts)
        )


Interval = tuple[float, float, PoseLabel]


@dataclass(frozen=True)
class AnnotationLog:
    intervals: tuple[Interval, ...]
    biocal_time_s: float

    def __post_init__(self):
        ivs = tuple((float(s), float(e), PoseLabel(lab)) for s, e, lab in self.intervals)
        for s, e, _ in ivs:
            if not s < e:
                raise PsmFormatError(f"interval start {s} not before end {e}")
        for (_, e0, _), (s1, _, _) in zip(ivs, ivs[1:]):
            if s1 < e0:
                raise PsmFormatError(f"intervals overlap or unsorted near t={s1}")
        object.__setattr__(self, "intervals", ivs)
        object.__setattr__(self, "biocal_time_s", float(self.biocal_time_s))

    def shifted(self, delta: float) -> "AnnotationLog":
        return AnnotationLog(
            tuple((s + delta, e + delta, lab) for s, e, lab in self.intervals),
            self.biocal_time_s + delta,
        )


@dataclass(frozen=True, eq=False)
class NightRecording:
    patient_id: str
    upper: DaqStream
    lower: DaqStream
    log: AnnotationLog

    def __post_init__(self):
        if self.upper.shape != self.lower.shape:
            raise PsmFormatError(f"section shapes differ: {self.upper.shape} vs {self.lower.shape}")

    @property
    def geometry(self) -> SensorGeometry:
        r, c = self.upper.shape
        return SensorGeometry.composite(r, c)

    def __eq__(self, other):
        if not isinstance(other, NightRecording):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and self.upper == other.upper
            and self.lower == other.lower
            and self.log == other.log
        )


@dataclass(frozen=True, eq=False)
class FrameSeries:
    """Time-sorted normalized frames on a single clock."""

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] != t.shape[0]:
            raise ValueError(f"values shape {v.shape} does not match {t.shape[0]} timestamps")
        _check_increasing(t, "frame series")
        if __debug__ and v.size:
            assert v.min() >= 0.0 and v.max() <= 1.0, "pressure outside [0,1]"
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, idx) -> "FrameSeries":
        return FrameSeries(self.timestamps[idx], self.values[idx])

    @property
    def frames(self) -> Iterator[PressureFrame]:
        for t, v in zip(self.timestamps, self.values):
            yield PressureFrame(float(t), v)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    frames: np.ndarray
    timestamps: np.ndarray
    labels: np.ndarray
    patients: np.ndarray
    geometry: SensorGeometry = field(default=CLINICAL)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        n = len(frames)
        if frames.ndim != 3:
            frames = frames.reshape(n, *self.geometry.shape)
        if frames.shape[1:] != self.geometry.shape:
            raise PsmFormatError(f"frames {frames.shape[1:]} do not match geometry {self.geometry.shape}")
        t = np.asarray(self.timestamps, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        patients = np.asarray(self.patients, dtype=object)
        if not (len(t) == len(labels) == len(patients) == n):
            raise PsmFormatError("frames, timestamps, labels and patients differ in length")
        if np.any((labels < 0) | (labels >= NUM_CLASSES)):
            raise PsmFormatError("dataset labels must be one of the four poses (no Transient)")
        if __debug__ and frames.size:
            assert frames.min() >= 0.0 and frames.max() <= 1.0, "pressure outside [0,1]"
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "patients", patients)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def samples(self) -> list[tuple[PressureFrame, PoseLabel, str]]:
        return [
            (PressureFrame(float(t), f), PoseLabel(int(y)), str(p))
            for f, t, y, p in zip(self.frames, self.timestamps, self.labels, self.patients)
        ]

    @property
    def patient_ids(self) -> list[str]:
        return sorted(set(self.patients.tolist()))

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.frames[idx], self.timestamps[idx], self.labels[idx], self.patients[idx], self.geometry)

    def for_patients(self, ids) -> "LabeledDataset":
        ids = set(ids)
        return self.subset(np.array([p in ids for p in self.patients], dtype=bool))

    @classmethod
    def concat(cls, parts: Sequence["LabeledDataset"], geometry: SensorGeometry | None = None) -> "LabeledDataset":
        parts = list(parts)
        if not parts:
            if geometry is None:
                raise ValueError("cannot concatenate zero datasets without a geometry")
            return cls.empty(geometry)
        geometry = geometry or parts[0].geometry
        for p in parts:
            if p.geometry.shape != geometry.shape:
                raise PsmFormatError(f"geometry mismatch: {p.geometry} vs {geometry}")
        return cls(
            np.concatenate([p.frames for p in parts]),
            np.concatenate([p.timestamps for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.patients for p in parts]),
            geometry,
        )

    @classmethod
    def empty(cls, geometry: SensorGeometry) -> "LabeledDataset":
        return cls(np.zeros((0, *geometry.shape)), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, object), geometry)

    def equals(self, other: "LabeledDataset") -> bool:
        return (
            self.geometry == other.geometry
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.labels, other.labels)
            and list(self.patients) == list(other.patients)
        )


# --- recording directory format -------------------------------------------------


def _fmt_t(t: float) -> str:
    return f"{t:.3f}"


def _write_stream_csv(path: Path, stream: DaqStream) -> None:
    n = stream.counts.shape[1] * stream.counts.shape[2]
    header = ",".join(["t"] + [f"s{i}" for i in range(n)])
    flat = stream.counts.reshape(len(stream), n)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for t, row in zip(stream.timestamps, flat):
            fh.write(_fmt_t(t) + "," + ",".join(map(str, row.tolist())) + "\n")


def _read_stream_csv(path: Path, section: Section, shape: tuple[int, int], rate: float) -> DaqStream:
    n = shape[0] * shape[1]
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t":
        raise PsmFormatError(f"{path}: malformed header (expected 't,s0,...')")
    if len(header) - 1 != n:
        raise PsmFormatError(
            f"{path}: {len(header) - 1} sensel columns, geometry {shape[0]}x{shape[1]} needs {n}"
        )
    if header[1:] != [f"s{i}" for i in range(n)]:
        raise PsmFormatError(f"{path}: malformed header sensel names")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    if data.size == 0:
        data = np.zeros((0, n + 1))
    if data.shape[1] != n + 1:
        raise PsmFormatError(f"{path}: rows have {data.shape[1] - 1} sensel values, expected {n}")
    counts = data[:, 1:]
    if not np.array_equal(counts, np.round(counts)):
        raise PsmFormatError(f"{path}: non-integer counts")
    try:
        return DaqStream(section, data[:, 0], counts.astype(np.int32).reshape(-1, *shape), rate)
    except PsmFormatError as exc:
        raise PsmFormatError(f"{path}: {exc}") from None


def write_log_csv(path: Path, log: AnnotationLog, exact: bool = False) -> None:
    """Recording logs use millisecond precision; ``exact`` writes full-precision reprs."""
    fmt = (lambda t: repr(float(t))) if exact else _fmt_t
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start", "end", "label"])
        for s, e, lab in log.intervals:
            w.writerow([fmt(s), fmt(e), PoseLabel(lab).title])
        w.writerow(["biocal", fmt(log.biocal_time_s)])


def read_log_csv(path: Path) -> AnnotationLog:
    intervals = []
    biocal = None
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["start", "end", "label"]:
        raise PsmFormatError(f"{path}: malformed header (expected 'start,end,label')")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            if row[0] == "biocal":
                if len(row) != 2 or biocal is not None:
                    raise PsmFormatError("bad biocal row")
                biocal = float(row[1])
            elif len(row) == 3:
                intervals.append((float(row[0]), float(row[1]), PoseLabel.parse(row[2])))
            else:
                raise PsmFormatError(f"expected 3 fields, got {len(row)}")
        except ValueError as exc:
            raise PsmFormatError(f"{path}:{lineno}: {exc}") from None
    if biocal is None:
        raise PsmFormatError(f"{path}: missing biocal row")
    return AnnotationLog(tuple(intervals), biocal)


def write_recording(rec: NightRecording, path: str | os.PathLike) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    r, c = rec.upper.shape
    meta = {
        "format_version": FORMAT_VERSION,
        "patient_id": rec.patient_id,
        "geometry": SensorGeometry.composite(r, c).to_dict(),
        "sample_rate_hz": {"upper": rec.upper.sample_rate_hz, "lower": rec.lower.sample_rate_hz},
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _write_stream_csv(path / "upper.csv", rec.upper)
    _write_stream_csv(path / "lower.csv", rec.lower)
    write_log_csv(path / "log.csv", rec.log)


def read_recording(path: str | os.PathLike) -> NightRecording:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError:
        raise PsmFormatError(f"{path}: missing meta.json") from None
    except json.JSONDecodeError as exc:
        raise PsmFormatError(f"{path}/meta.json: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise PsmFormatError(f"{path}/meta.json: unsupported format_version {meta.get('format_version')!r}")
    geom = SensorGeometry.from_dict(meta["geometry"])
    rates = meta.get("sample_rate_hz", {})
    upper = _read_stream_csv(path / "upper.csv", Section.UPPER, geom.section_shape, float(rates.get("upper", 10.0)))
    lower = _read_stream_csv(path / "lower.csv", Section.LOWER, geom.section_shape, float(rates.get("lower", 10.0)))
    return NightRecording(str(meta["patient_id"]), upper, lower, read_log_csv(path / "log.csv"))


# --- labeled dataset format -----------------------------------------------------


def write_dataset(ds: LabeledDataset, path: str | os.PathLike) -> None:
    """Write ``dataset.csv`` + ``dataset.json``; values use repr so reads are exact."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n = ds.geometry.n_sensels
    flat = ds.frames.reshape(len(ds), n)
    with open(path / "dataset.csv", "w", newline="") as fh:
        fh.write(",".join(["patient", "t", "label"] + [f"s{i}" for i in range(n)]) + "\n")
        for p, t, y, row in zip(ds.patients, ds.timestamps, ds.labels, flat):
            fh.write(f"{p},{float(t)!r},{PoseLabel(int(y)).title}," + ",".join(map(repr, row.tolist())) + "\n")
    meta = {"format_version": FORMAT_VERSION, "geometry": ds.geometry.to_dict(), "n_samples": len(ds)}
    (path / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_dataset(path: str | os.PathLike) -> LabeledDataset:
    path = Path(path)
    try:
        meta = json.loads((path / "dataset.json").read_text())
    except FileNotFoundError:
        raise PsmFormatError(f"{path}: missing dataset.json") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise PsmFormatError(f"{path}/dataset.json: unsupported format_version {meta.get('format_version')!r}")
    geom = SensorGeometry.from_dict(meta["geometry"])
    n = geom.n_sensels
    patients, ts, labels, rows = [], [], [], []
    with open(path / "dataset.csv", newline="") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:3] != ["patient", "t", "label"] or len(header) != n + 3:
            raise PsmFormatError(f"{path}/dataset.csv: header does not match geometry {geom.rows}x{geom.cols}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != n + 3:
                raise PsmFormatError(f"{path}/dataset.csv:{lineno}: expected {n + 3} fields, got {len(parts)}")
            patients.append(parts[0])
            ts.append(float(parts[1]))
            labels.append(int(PoseLabel.parse(parts[2])))
            rows.append(parts[3:])
    frames = np.array(rows, dtype=np.float64).reshape(-1, *geom.shape)
    return LabeledDataset(frames, np.array(ts), np.array(labels, np.int64), np.array(patients, dtype=object), geom)


# --- external frame-per-line datasets ------------------------------------------


def write_external_dataset(
    frames_by_file: dict[str, np.ndarray],
    entries: dict[str, tuple[str, PoseLabel]],
    geometry: SensorGeometry,
    full_scale: float,
    path: str | os.PathLike,
) -> None:
    """Emit plain-text frame-per-line files plus ``manifest.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for name in sorted(frames_by_file):
        arr = np.asarray(frames_by_file[name]).reshape(-1, geometry.n_sensels)
        np.savetxt(path / name, arr, fmt="%.6g", delimiter=" ")
        subject, label = entries[name]
        files.append({"file": name, "subject": subject, "label": PoseLabel(label).title})
    manifest = {
        "format_version": FORMAT_VERSION,
        "layout": "frame-per-line",
        "geometry": geometry.to_dict(),
        "full_scale": float(full_scale),
        "files": files,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_external_dataset(
    path: str | os.PathLike,
    geometry: SensorGeometry | None = None,
    layout: str = "frame-per-line",
) -> LabeledDataset:
    """Read a frame-per-line dataset; frames are divided by the manifest's full scale."""
    if layout != "frame-per-line":
        raise ValueError(f"unsupported layout {layout!r}")
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise PsmFormatError(f"{path}: missing manifest.json") from None
    declared = SensorGeometry.from_dict(manifest["geometry"]) if "geometry" in manifest else None
    if geometry is None:
        if declared is None:
            raise PsmFormatError(f"{path}: no geometry given and none in manifest")
        geometry = declared
    elif declared is not None and declared.shape != geometry.shape:
        raise PsmFormatError(f"{path}: manifest geometry {declared.shape} != requested {geometry.shape}")
    if "full_scale" not in manifest or float(manifest["full_scale"]) <= 0:
        raise PsmFormatError(f"{path}/manifest.json: missing or non-positive full_scale")
    full_scale = float(manifest["full_scale"])
    entries = {e["file"]: e for e in manifest.get("files", [])}
    on_disk = sorted(p.name for p in path.iterdir() if p.suffix == ".txt")
    for name in on_disk:
        if name not in entries:
            raise PsmFormatError(f"{path / name}: missing manifest entry")
    n = geometry.n_sensels
    parts = []
    for name in sorted(entries):
        entry = entries[name]
        fpath = path / name
        if not fpath.exists():
            raise PsmFormatError(f"{fpath}: listed in manifest but not found")
        rows = []
        with open(fpath) as fh:
            for lineno, line in enumerate(fh, start=1):
                vals = line.split()
                if not vals:
                    continue
                if len(vals) != n:
                    raise PsmFormatError(
                        f"{fpath}:{lineno}: {len(vals)} values, geometry {geometry.rows}x{geometry.cols} needs {n}"
                    )
                rows.append(vals)
        arr = np.array(rows, dtype=np.float64).reshape(-1, n) / full_scale
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise PsmFormatError(f"{fpath}: values outside [0, full_scale={full_scale}]")
        label = int(PoseLabel.parse(entry["label"]))
        k = len(arr)
        parts.append(
            LabeledDataset(
                arr.reshape(k, *geometry.shape),
                np.arange(k, dtype=np.float64),
                np.full(k, label, np.int64),
                np.full(k, str(entry["subject"]), dtype=object),
                geometry,
            )
        )
    return LabeledDataset.concat(parts, geometry)
