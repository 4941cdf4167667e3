import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from psmpose.data import LabeledDataset
from psmpose.features import FEATURE_NAMES, extract_features, read_features, write_features

frames = arrays(np.float64, (18, 8), elements=st.floats(0, 1))
IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}


def test_nine_features_in_order():
    assert len(FEATURE_NAMES) == 9
    assert FEATURE_NAMES[0] == "total_pressure"


def test_uniform_frame_cop_at_centre():
    f = extract_features(np.full((18, 8), 0.5))
    assert f[IDX["cop_row"]] == pytest.approx(8.5) and f[IDX["cop_col"]] == pytest.approx(3.5)
    assert f[IDX["lr_asymmetry"]] == pytest.approx(0.0)
    assert f[IDX["upper_fraction"]] == pytest.approx(0.5)


def test_point_mass():
    v = np.zeros((18, 8))
    v[4, 6] = 0.7
    f = extract_features(v)
    assert f[IDX["cop_row"]] == pytest.approx(4.0) and f[IDX["cop_col"]] == pytest.approx(6.0)
    assert f[IDX["spread_row"]] == pytest.approx(0, abs=1e-7) and f[IDX["spread_col"]] == pytest.approx(0, abs=1e-7)
    assert f[IDX["active_fraction"]] == pytest.approx(1 / 144)
    assert f[IDX["lr_asymmetry"]] == pytest.approx(-1.0)


def test_zero_frame_convention():
    f = extract_features(np.zeros((18, 8)))
    assert f[IDX["cop_row"]] == 8.5 and f[IDX["cop_col"]] == 3.5
    others = [i for n, i in IDX.items() if n not in ("cop_row", "cop_col")]
    assert not f[others].any()


@given(frames)
def test_mirror_property(v):
    a, b = extract_features(v), extract_features(v[:, ::-1])
    assert b[IDX["lr_asymmetry"]] == pytest.approx(-a[IDX["lr_asymmetry"]], abs=1e-9)
    if a[0] > 0:
        assert b[IDX["cop_col"]] == pytest.approx(7 - a[IDX["cop_col"]], abs=1e-9)
    assert np.all(np.isfinite(a))
    assert -1 <= a[IDX["lr_asymmetry"]] <= 1
    if a[0] > 0:
        assert 0 <= a[IDX["cop_row"]] <= 17 and 0 <= a[IDX["cop_col"]] <= 7


@given(frames, st.floats(0.1, 10))
def test_scale_invariance(v, k):
    a = extract_features(v)
    b = extract_features(v * k)
    keep = [IDX[n] for n in ("cop_row", "cop_col", "spread_row", "spread_col", "lr_asymmetry", "upper_fraction", "lower_fraction")]
    if a[0] > 1e-6:
        np.testing.assert_allclose(b[keep], a[keep], atol=1e-7)
    assert b[0] == pytest.approx(k * a[0], rel=1e-9, abs=1e-12)


def test_features_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = LabeledDataset(rng.random((4, 18, 8)), np.arange(4) + 0.5, [0, 1, 2, 3], ["A", "A", "B", "B"])
    write_features(tmp_path / "f.csv", ds)
    assert (tmp_path / "f.csv").read_text().startswith("# feature order: f0=total_pressure")
    patients, t, labels, feats = read_features(tmp_path / "f.csv")
    assert patients.tolist() == ["A", "A", "B", "B"] and labels.tolist() == [0, 1, 2, 3]
    np.testing.assert_array_equal(t, ds.timestamps)
    np.testing.assert_allclose(feats, np.array([extract_features(f) for f in ds.frames]), rtol=1e-12, atol=1e-12)
