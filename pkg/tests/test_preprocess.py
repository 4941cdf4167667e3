import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import dedup_reference
from psmpose import preprocess as pp
from psmpose.data import AnnotationLog, FrameSeries, LabeledDataset, PoseLabel, PressureFrame, SensorGeometry
from psmpose.sync import sync_night


def _series(t, shape=(2, 2), value=0.5):
    return FrameSeries(np.asarray(t, float), np.full((len(t), *shape), value))


def test_downsample_ten_hz_hundred_seconds():
    out = pp.downsample(_series(np.arange(1000) * 0.1), 1.0)
    assert abs(len(out) - 100) <= 1


def test_downsample_same_rate_identity():
    t = np.arange(50) * 0.1
    out = pp.downsample(_series(t), 10.0)
    assert np.array_equal(out.timestamps, t)


def test_downsample_two_frames_one_output():
    assert len(pp.downsample(_series([0.0, 0.1]), 1.0)) == 1


def test_downsample_empty():
    assert len(pp.downsample(_series([]), 1.0)) == 0


def _log():
    return AnnotationLog(
        ((0.0, 100.0, PoseLabel.LEFT), (100.0, 108.0, PoseLabel.TRANSIENT), (108.0, 200.0, PoseLabel.SUPINE)), 50.0
    )


def test_drop_transients_margin_rule():
    t = np.array([50.0, 97.0, 102.0, 110.0, 115.0])
    ds = pp.drop_transients(_series(t), _log(), 5.0, "P1")
    assert ds.timestamps.tolist() == [50.0, 115.0]
    assert ds.labels.tolist() == [PoseLabel.LEFT, PoseLabel.SUPINE]
    assert set(ds.patients) == {"P1"}


def test_kept_frames_avoid_crossfades(short_night):
    rec, truth = short_night
    ds = pp.preprocess_night(sync_night(rec))
    assert len(ds) > 0
    for s, e in truth.transitions:
        assert not np.any((ds.timestamps >= s) & (ds.timestamps < e))
    assert set(ds.patients) == {rec.patient_id}
    assert int(PoseLabel.TRANSIENT) not in ds.labels


def _ds(values, labels, patients=None):
    values = np.asarray(values, float)
    n = len(values)
    return LabeledDataset(values.reshape(n, 1, -1), np.arange(n, dtype=float), labels,
                          patients if patients is not None else ["P"] * n, SensorGeometry(1, values.shape[1], 1))


def test_dedup_identical_frames():
    assert len(pp.dedup(_ds(np.full((6, 4), 0.3), [1] * 6))) == 1


def test_dedup_epsilon_zero_keeps_all():
    assert len(pp.dedup(_ds(np.full((6, 4), 0.3), [1] * 6), 0.0)) == 6


def test_dedup_alternating():
    a, b = np.zeros(4), np.full(4, 0.05)
    assert len(pp.dedup(_ds([a, b, a, b, a], [0] * 5), 0.01)) == 5


def test_dedup_resets_per_patient():
    ds = _ds(np.full((4, 4), 0.3), [0] * 4, ["A", "A", "B", "B"])
    assert pp.dedup(ds).patients.tolist() == ["A", "B"]


seqs = st.integers(1, 40).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, (n, 3), elements=st.sampled_from([0.0, 0.01, 0.02, 0.05, 0.1])),
        arrays(np.int64, n, elements=st.integers(0, 1)),
    )
)


@given(seqs, st.floats(0, 0.06))
def test_dedup_matches_reference_and_is_idempotent(seq, eps):
    vals, labels = seq
    ds = _ds(vals, labels)
    once = pp.dedup(ds, eps)
    assert once.timestamps.astype(int).tolist() == dedup_reference(vals, labels, eps)
    assert pp.dedup(once, eps).equals(once)


@given(seqs, st.floats(0, 0.06), st.floats(0, 0.06))
def test_dedup_shrinks_with_epsilon(seq, e1, e2):
    vals, labels = seq
    lo, hi = min(e1, e2), max(e1, e2)
    assert len(pp.dedup(_ds(vals, labels), hi)) <= len(pp.dedup(_ds(vals, labels), lo))


def test_resize_examples():
    const = pp.resize_bilinear(np.full((18, 8), 0.4), (18, 18))
    assert const.shape == (18, 18) and np.allclose(const, 0.4)
    src = np.random.default_rng(1).random((5, 7))
    assert np.array_equal(pp.resize_bilinear(src, (5, 7)), src)
    out = pp.resize_bilinear(np.array([[0.0, 1.0], [1.0, 0.0]]), (3, 3))
    assert out[1, 1] == 0.5 and out[0, 0] == 0.0 and out[0, 2] == 1.0
    f = pp.resize_bilinear(PressureFrame(7.25, np.zeros((18, 8))), (18, 18))
    assert f.timestamp == 7.25 and not f.values.any()
    with pytest.raises(ValueError):
        pp.resize_bilinear(src, (0, 3))


@given(arrays(np.float64, (4, 3), elements=st.floats(0, 1)), st.integers(1, 9), st.integers(1, 9))
def test_resize_keeps_unit_range_and_corners(src, r, c):
    out = pp.resize_bilinear(src, (r, c))
    assert out.min() >= 0 and out.max() <= 1
    if r > 1 and c > 1:
        assert out[0, 0] == pytest.approx(src[0, 0]) and out[-1, -1] == pytest.approx(src[-1, -1])


def test_pad_examples():
    out = pp.pad_to_target(np.ones((32, 64)), (64, 64))
    assert not out[:16].any() and not out[48:].any() and out[16:48].all()
    src = np.random.default_rng(2).random((3, 3))
    assert np.array_equal(pp.pad_to_target(src, (3, 3)), src)
    out = pp.pad_to_target(np.ones((2, 4)), (4, 4))
    assert out[1:3].all() and not out[0].any() and not out[3].any()
    odd = pp.pad_to_target(np.ones((2, 2)), (5, 5))
    assert odd[1:3, 1:3].all() and odd.sum() == 4  # extra row/col at bottom/right
    assert not pp.pad_to_target(np.zeros((2, 2)), (6, 6)).any()
    with pytest.raises(ValueError):
        pp.pad_to_target(np.ones((4, 4)), (3, 8))


def test_pad_stack_matches_single():
    frames = np.random.default_rng(3).random((3, 32, 64))
    stacked = pp.pad_stack(frames, (64, 64))
    for f, s in zip(frames, stacked):
        assert np.array_equal(pp.pad_to_target(f, (64, 64)), s)


def test_params_validation():
    with pytest.raises(ValueError):
        pp.PreprocessParams(dedup_epsilon=-1)
