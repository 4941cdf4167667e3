import numpy as np
import pytest

from psmpose import synth
from psmpose.data import CLINICAL, FULL_SCALE, PoseLabel, read_recording


def _col_centroid(v):
    cols = np.arange(v.shape[1])
    return float((v.sum(axis=0) * cols).sum() / v.sum())


def test_supine_template_is_mirror_symmetric():
    v = synth.pose_template(PoseLabel.SUPINE).values
    assert np.max(np.abs(v - v[:, ::-1])) <= 1e-9


def test_lateral_ordering_and_prone_peak():
    left = synth.pose_template(PoseLabel.LEFT).values
    right = synth.pose_template(PoseLabel.RIGHT).values
    assert _col_centroid(left) < _col_centroid(right)
    assert synth.pose_template(PoseLabel.PRONE).values.max() < synth.pose_template(PoseLabel.SUPINE).values.max()


def test_templates_in_unit_range():
    for pose in (PoseLabel.LEFT, PoseLabel.RIGHT, PoseLabel.SUPINE, PoseLabel.PRONE):
        v = synth.pose_template(pose).values
        assert v.shape == CLINICAL.shape and v.min() >= 0 and v.max() <= 1


def test_transient_template_rejected():
    with pytest.raises(ValueError):
        synth.pose_template(PoseLabel.TRANSIENT)


def test_injected_drift():
    cfg = synth.SynthConfig(seed=5, night_duration_s=1800, drift_s=3.0)
    rec, truth = synth.generate_night(cfg)
    assert truth.true_drift_s == 3.0
    i = int(np.searchsorted(rec.upper.timestamps, truth.true_entry_s))
    assert rec.lower.timestamps[i] - rec.upper.timestamps[i] == pytest.approx(3.0, abs=0.1)


def test_same_seed_identical_bytes(tmp_path):
    cfg = synth.SynthConfig(seed=9, night_duration_s=900)
    for d in ("a", "b"):
        rec, truth = synth.generate_night(cfg, 2)
        synth.write_night(rec, truth, tmp_path / d)
    for name in ("meta.json", "upper.csv", "lower.csv", "log.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_noise_before_entry():
    cfg = synth.SynthConfig(seed=1, night_duration_s=1800, entry_time_s=300.0)
    rec, _ = synth.generate_night(cfg)
    before = rec.upper.counts[:1000].astype(float)
    assert before.mean() < 3 * cfg.noise_sigma * FULL_SCALE


def test_infeasible_schedule():
    cfg = synth.SynthConfig(
        seed=0, night_duration_s=1000, entry_time_s=100, exit_time_s=900,
        pose_schedule=[(500, PoseLabel.LEFT), (500, PoseLabel.SUPINE)],
    )
    with pytest.raises(ValueError):
        synth.generate_night(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        synth.SynthConfig(transition_duration_s=0)
    with pytest.raises(ValueError):
        synth.SynthConfig(breathing=synth.Breathing(amplitude=1.5))
    with pytest.raises(ValueError):
        synth.generate_night(synth.SynthConfig(night_duration_s=1000, entry_time_s=900, biocal=synth.Biocal(time_s=100)))


def test_explicit_schedule_and_log():
    cfg = synth.SynthConfig(
        seed=0, night_duration_s=2000, entry_time_s=100, exit_time_s=1900,
        pose_schedule=[(600, PoseLabel.LEFT), (600, PoseLabel.PRONE), (500, PoseLabel.RIGHT)],
    )
    rec, truth = synth.generate_night(cfg)
    poses = [lab for _, _, lab in truth.intervals]
    assert poses == [PoseLabel.LEFT, PoseLabel.TRANSIENT, PoseLabel.PRONE, PoseLabel.TRANSIENT, PoseLabel.RIGHT]
    shifted = [(s - truth.log_shift_s, e - truth.log_shift_s) for s, e, _ in rec.log.intervals]
    np.testing.assert_allclose(shifted, [(s, e) for s, e, _ in truth.intervals], atol=1e-9)
    assert truth.transitions[0][1] - truth.transitions[0][0] == pytest.approx(8.0)


def test_label_separability_by_centroid():
    cfg = synth.SynthConfig(seed=4, n_patients=3, night_duration_s=7200, mean_dwell_s=600)
    by_pose = {p: [] for p in (PoseLabel.LEFT, PoseLabel.RIGHT, PoseLabel.SUPINE, PoseLabel.PRONE)}
    for rec, truth in synth.generate_cohort(cfg):
        full = np.concatenate([rec.upper.counts, rec.lower.counts], axis=1).astype(float)
        t = rec.upper.timestamps
        for s, e, lab in truth.intervals:
            if lab is PoseLabel.TRANSIENT:
                continue
            sel = (t >= s) & (t < e)
            by_pose[lab].append(_col_centroid(full[sel].mean(axis=0)))
    m = {p: np.mean(v) for p, v in by_pose.items() if v}
    mid = [m[p] for p in (PoseLabel.SUPINE, PoseLabel.PRONE) if p in m]
    assert m[PoseLabel.LEFT] < min(mid) and max(mid) < m[PoseLabel.RIGHT]


def test_write_read_night(tmp_path):
    rec, truth = synth.generate_night(synth.SynthConfig(seed=3, night_duration_s=600, entry_time_s=30, biocal=synth.Biocal(time_s=200)))
    synth.write_night(rec, truth, tmp_path)
    assert read_recording(tmp_path) == rec
    assert synth.read_truth(tmp_path) == truth
