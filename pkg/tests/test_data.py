import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psmpose import synth
from psmpose.data import (
    CLINICAL,
    FULL_SCALE,
    AnnotationLog,
    DaqStream,
    LabeledDataset,
    NormMode,
    OutOfRangeError,
    PoseLabel,
    PsmFormatError,
    RawFrame,
    Section,
    SensorGeometry,
    normalize_counts,
    normalize_frame,
    read_dataset,
    read_external_dataset,
    read_recording,
    write_dataset,
    write_external_dataset,
    write_recording,
)


@pytest.mark.parametrize("count, expected", [(2046, 1.0), (0, 0.0), (1023, 0.5)])
def test_normalize_examples(count, expected):
    frame = normalize_frame(RawFrame(1.5, np.full((18, 8), count)))
    assert np.all(frame.values == expected)
    assert frame.timestamp == 1.5


def test_strict_rejects_out_of_range_with_position():
    counts = np.zeros((18, 8), dtype=np.int64)
    counts[4, 6] = 2047
    with pytest.raises(OutOfRangeError) as err:
        normalize_frame(RawFrame(0.0, counts))
    assert (err.value.row, err.value.col) == (4, 6)
    lenient = normalize_frame(RawFrame(0.0, counts), NormMode.LENIENT)
    assert lenient.values[4, 6] == 1.0


@given(st.integers(-100, 2200), st.integers(-100, 2200))
def test_normalize_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert normalize_counts(np.array([lo]), "lenient")[0] <= normalize_counts(np.array([hi]), "lenient")[0]


def test_geometry_invariants():
    assert CLINICAL.shape == (18, 8) and CLINICAL.section_rows == 9
    with pytest.raises(ValueError):
        SensorGeometry(0, 8)
    assert SensorGeometry.from_dict(CLINICAL.to_dict()) == CLINICAL


def test_pose_label_parse():
    assert PoseLabel.parse("supine") is PoseLabel.SUPINE
    with pytest.raises(PsmFormatError):
        PoseLabel.parse("sitting")


def test_stream_requires_increasing_timestamps():
    with pytest.raises(PsmFormatError):
        DaqStream(Section.UPPER, np.array([1.0, 1.0]), np.zeros((2, 9, 8), np.int32), 10.0)


def test_annotation_log_validation():
    with pytest.raises(PsmFormatError):
        AnnotationLog(((0, 10, PoseLabel.LEFT), (5, 20, PoseLabel.RIGHT)), 1.0)
    with pytest.raises(PsmFormatError):
        AnnotationLog(((10, 10, PoseLabel.LEFT),), 1.0)


def test_recording_round_trip(tmp_path, short_night):
    rec, _ = short_night
    write_recording(rec, tmp_path / "n")
    back = read_recording(tmp_path / "n")
    assert back == rec
    assert np.array_equal(back.upper.timestamps, rec.upper.timestamps)
    assert np.array_equal(back.lower.counts, rec.lower.counts)
    assert back.log.intervals == rec.log.intervals


def _tiny_recording():
    t = np.array([0.0, 0.1, 0.2])
    up = DaqStream(Section.UPPER, t, np.full((3, 9, 8), 5, np.int32), 10.0)
    lo = DaqStream(Section.LOWER, t + 0.5, np.full((3, 9, 8), 7, np.int32), 10.0)
    from psmpose.data import NightRecording

    return NightRecording("P9", up, lo, AnnotationLog(((0.0, 0.2, PoseLabel.SUPINE),), 0.1))


def test_recording_column_mismatch(tmp_path):
    write_recording(_tiny_recording(), tmp_path / "n")
    path = tmp_path / "n" / "upper.csv"
    lines = path.read_text().splitlines()
    lines = [",".join(line.split(",")[:-1]) for line in lines]  # 143 sensel columns
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(PsmFormatError):
        read_recording(tmp_path / "n")


def test_recording_non_monotone(tmp_path):
    write_recording(_tiny_recording(), tmp_path / "n")
    path = tmp_path / "n" / "lower.csv"
    lines = path.read_text().splitlines()
    lines[2] = lines[1]  # timestamps [0.5, 0.5, ...]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(PsmFormatError):
        read_recording(tmp_path / "n")


def test_recording_format_version(tmp_path):
    write_recording(_tiny_recording(), tmp_path / "n")
    meta = json.loads((tmp_path / "n" / "meta.json").read_text())
    meta["format_version"] = 99
    (tmp_path / "n" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(PsmFormatError):
        read_recording(tmp_path / "n")


def test_dataset_rejects_transient():
    with pytest.raises(PsmFormatError):
        LabeledDataset(np.zeros((1, 18, 8)), [0.0], [int(PoseLabel.TRANSIENT)], ["P0"])


def test_dataset_round_trip(tmp_path, rng):
    ds = LabeledDataset(rng.random((5, 18, 8)), np.arange(5) * 1.1, rng.integers(0, 4, 5), ["P0", "P0", "P1", "P1", "P1"])
    write_dataset(ds, tmp_path / "d")
    assert read_dataset(tmp_path / "d").equals(ds)


def test_external_dataset(tmp_path):
    geom = SensorGeometry(32, 64, 16)
    frames = {"a.txt": np.zeros((2, 2048)), "b.txt": np.full((1, 2048), 500.0)}
    entries = {"a.txt": ("S1", PoseLabel.LEFT), "b.txt": ("S2", PoseLabel.SUPINE)}
    write_external_dataset(frames, entries, geom, 1000.0, tmp_path)
    ds = read_external_dataset(tmp_path)
    assert ds.frames.shape == (3, 32, 64)
    assert np.all(ds.frames[:2] == 0) and np.all(ds.frames[2] == 0.5)
    assert sorted(ds.labels.tolist()) == [0, 0, 2]


def test_external_dataset_errors(tmp_path):
    geom = SensorGeometry(32, 64, 16)
    write_external_dataset({"a.txt": np.zeros((1, 2048))}, {"a.txt": ("S1", PoseLabel.LEFT)}, geom, 1000.0, tmp_path)
    (tmp_path / "a.txt").write_text(" ".join(["0"] * 2047) + "\n")
    with pytest.raises(PsmFormatError):
        read_external_dataset(tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["files"].append({"file": "missing.txt", "subject": "S2", "label": "Left"})
    (tmp_path / "a.txt").write_text(" ".join(["0"] * 2048) + "\n")
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(PsmFormatError):
        read_external_dataset(tmp_path)


def test_full_scale_constant():
    assert FULL_SCALE == 2046


def test_synthetic_external_reads_back(tmp_path):
    synth.write_external(tmp_path, seed=1, n_subjects=2, frames_per_pose=3)
    ds = read_external_dataset(tmp_path)
    assert ds.geometry.shape == (32, 64)
    assert len(ds) == 2 * 3 * 3
    assert ds.frames.max() <= 1.0
