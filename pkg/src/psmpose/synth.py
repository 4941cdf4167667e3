"""Deterministic synthetic nights: two drifting DAQ streams, a shifted annotation log
and the hidden ground truth needed to score synchronization and alignment.

Body model: each pose is a sum of two 2-D Gaussian blobs (shoulders, hips),
scaled so the whole grid carries a fixed load. Total pressure is therefore the
same for every pose and pose cross-fades leave it unchanged, while breathing
modulates it multiplicatively.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (
    FULL_SCALE,
    AnnotationLog,
    DaqStream,
    LabeledDataset,
    NightRecording,
    PoseLabel,
    PressureFrame,
    Section,
    SensorGeometry,
    CLINICAL,
    write_external_dataset,
    write_recording,
)

POSES = (PoseLabel.LEFT, PoseLabel.RIGHT, PoseLabel.SUPINE, PoseLabel.PRONE)
POSE_WEIGHTS = (0.25, 0.25, 0.35, 0.15)
_CHUNK = 8192


@dataclass(frozen=True)
class BodyParams:
    load: float = 0.12  # mean normalized pressure over the whole grid
    shoulder_frac: float = 0.22
    hip_frac: float = 0.62
    row_offset_frac: float = 0.0
    col_shift_frac: float = 0.0
    sigma_row_frac: float = 0.11
    sigma_col_frac: float = 0.19
    spread: float = 1.0

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "BodyParams":
        return cls(
            load=float(rng.uniform(0.10, 0.14)),
            row_offset_frac=float(rng.uniform(-0.03, 0.03)),
            spread=float(rng.uniform(0.94, 1.06)),
        )


def _blob(rr, cc, r0, c0, sr, sc):
    return np.exp(-0.5 * (((rr - r0) / sr) ** 2 + ((cc - c0) / sc) ** 2))


def template_values(pose: PoseLabel, geometry: SensorGeometry, body: BodyParams = BodyParams()) -> np.ndarray:
    pose = PoseLabel(pose)
    if pose is PoseLabel.TRANSIENT:
        raise ValueError("no template for Transient")
    R, C = geometry.shape
    rr, cc = np.meshgrid(np.arange(R, dtype=np.float64), np.arange(C, dtype=np.float64), indexing="ij")
    sr = body.sigma_row_frac * R * body.spread
    sc = body.sigma_col_frac * C * body.spread
    amp = 1.0
    centre = (C - 1) / 2.0 + body.col_shift_frac * (C - 1)
    if pose is PoseLabel.PRONE:
        amp, sr, sc = 0.8, sr * 1.25, sc * 1.25
    elif pose is PoseLabel.LEFT:
        centre -= 0.25 * (C - 1)
        sc *= 0.6
    elif pose is PoseLabel.RIGHT:
        centre += 0.25 * (C - 1)
        sc *= 0.6
    r_sh = (body.shoulder_frac + body.row_offset_frac) * (R - 1)
    r_hip = (body.hip_frac + body.row_offset_frac) * (R - 1)
    raw = amp * (_blob(rr, cc, r_sh, centre, sr, sc) + _blob(rr, cc, r_hip, centre, sr, sc))
    raw *= body.load * R * C / raw.sum()
    return np.clip(raw, 0.0, 1.0)


def pose_template(pose: PoseLabel, geometry: SensorGeometry = CLINICAL, body: BodyParams = BodyParams()) -> PressureFrame:
    """Noise-free pressure image of one pose on the given grid."""
    return PressureFrame(0.0, template_values(pose, geometry, body))


@dataclass(frozen=True)
class Breathing:
    rate_hz: float = 0.25
    amplitude: float = 0.03


@dataclass(frozen=True)
class Biocal:
    time_s: float | None = None  # centre of the maneuver, Upper clock; None -> entry + 300 s
    amplitude: float = 0.15
    duration_s: float = 60.0


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_patients: int = 1
    night_duration_s: float = 28800.0
    sample_rate_hz: float = 10.0
    drift_s: float | None = None  # None -> U(-5, 5) per patient
    entry_time_s: float | None = None
    exit_time_s: float | None = None
    pose_schedule: Sequence[tuple[float, PoseLabel]] | str = "random"
    mean_dwell_s: float = 1800.0
    min_dwell_s: float = 60.0
    transition_duration_s: float = 8.0
    breathing: Breathing = field(default_factory=Breathing)
    biocal: Biocal = field(default_factory=Biocal)
    noise_sigma: float = 0.01
    geometry: SensorGeometry = CLINICAL
    log_shift_max_s: float = 30.0

    def __post_init__(self):
        if self.transition_duration_s <= 0:
            raise ValueError("transition_duration_s must be positive")
        for name, a in (("breathing", self.breathing.amplitude), ("biocal", self.biocal.amplitude)):
            if not 0 < a < 1:
                raise ValueError(f"{name} amplitude must lie in (0, 1), got {a}")
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        if self.night_duration_s <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("duration and sample rate must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.to_dict()
        if not isinstance(self.pose_schedule, str):
            d["pose_schedule"] = [[float(s), PoseLabel(p).title] for s, p in self.pose_schedule]
        return d


@dataclass(frozen=True)
class GroundTruth:
    patient_id: str
    true_drift_s: float
    true_entry_s: float
    true_exit_s: float
    true_biocal_s: float
    log_shift_s: float
    intervals: tuple[tuple[float, float, PoseLabel], ...]  # Upper clock, incl. Transient
    body: BodyParams

    @property
    def transitions(self) -> list[tuple[float, float]]:
        return [(s, e) for s, e, lab in self.intervals if lab is PoseLabel.TRANSIENT]

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "true_drift_s": self.true_drift_s,
            "true_entry_s": self.true_entry_s,
            "true_exit_s": self.true_exit_s,
            "true_biocal_s": self.true_biocal_s,
            "log_shift_s": self.log_shift_s,
            "intervals": [[s, e, PoseLabel(lab).title] for s, e, lab in self.intervals],
            "body": asdict(self.body),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            d["patient_id"],
            d["true_drift_s"],
            d["true_entry_s"],
            d["true_exit_s"],
            d["true_biocal_s"],
            d["log_shift_s"],
            tuple((s, e, PoseLabel.parse(lab)) for s, e, lab in d["intervals"]),
            BodyParams(**d["body"]),
        )


def _ms(x: float) -> int:
    return int(round(x * 1000.0))


def _schedule(cfg: SynthConfig, entry: float, exit_: float, rng: np.random.Generator):
    """Pose episodes as (start, end, pose) on the Upper clock, transitions between."""
    trans = cfg.transition_duration_s
    if isinstance(cfg.pose_schedule, str):
        if cfg.pose_schedule != "random":
            raise ValueError(f"unknown pose schedule {cfg.pose_schedule!r}")
        plan = []
        t, prev = entry, None
        while t < exit_:
            choices = [p for p in POSES if p is not prev]
            w = np.array([POSE_WEIGHTS[POSES.index(p)] for p in choices])
            pose = choices[int(rng.choice(len(choices), p=w / w.sum()))]
            dwell = max(cfg.min_dwell_s, float(rng.exponential(cfg.mean_dwell_s)))
            plan.append((dwell, pose))
            t += dwell + trans
            prev = pose
    else:
        plan = [(float(d), PoseLabel(p)) for d, p in cfg.pose_schedule]
        need = sum(d for d, _ in plan) + trans * (len(plan) - 1)
        if need > exit_ - entry + 1e-9:
            raise ValueError(f"infeasible schedule: needs {need:.1f} s, occupancy window is {exit_ - entry:.1f} s")
        if any(p is PoseLabel.TRANSIENT for _, p in plan):
            raise ValueError("schedule may not contain Transient poses")
    episodes = []
    t = entry
    for i, (dwell, pose) in enumerate(plan):
        end = min(t + dwell, exit_)
        if i == len(plan) - 1:
            end = exit_
        episodes.append((_ms(t) / 1000.0, _ms(end) / 1000.0, pose))
        t = end + trans
        if t >= exit_ - cfg.min_dwell_s / 2:
            # too little room for another episode: stretch this one to the exit
            episodes[-1] = (episodes[-1][0], _ms(exit_) / 1000.0, pose)
            break
    return episodes


def generate_night(cfg: SynthConfig, patient: int = 0) -> tuple[NightRecording, GroundTruth]:
    """Generate one patient's night. Output is a pure function of (cfg, patient)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed) & (2**64 - 1), int(patient)]))
    T = cfg.night_duration_s
    entry = cfg.entry_time_s if cfg.entry_time_s is not None else float(rng.uniform(0.05, 0.15)) * T
    exit_ = cfg.exit_time_s if cfg.exit_time_s is not None else T - float(rng.uniform(0.05, 0.10)) * T
    entry, exit_ = _ms(entry) / 1000.0, _ms(exit_) / 1000.0
    biocal_t = cfg.biocal.time_s if cfg.biocal.time_s is not None else entry + 300.0
    biocal_t = _ms(biocal_t) / 1000.0
    if not (0 <= entry < biocal_t < exit_ <= T):
        raise ValueError(f"need 0 <= entry < biocal < exit <= duration, got {entry}, {biocal_t}, {exit_}, {T}")
    drift = cfg.drift_s if cfg.drift_s is not None else float(rng.uniform(-5.0, 5.0))
    drift_ms = _ms(drift)
    log_shift_ms = _ms(float(rng.uniform(-cfg.log_shift_max_s, cfg.log_shift_max_s)))
    body = BodyParams.sample(rng)
    episodes = _schedule(cfg, entry, exit_, rng)

    geom = cfg.geometry
    templates = []
    for _, _, pose in episodes:
        jitter = float(rng.uniform(-0.05, 0.05))
        templates.append(template_values(pose, geom, replace(body, col_shift_frac=jitter)))
    templates.append(np.zeros(geom.shape))
    templates = np.stack(templates).reshape(len(templates), -1)
    empty = len(templates) - 1

    period_ms = int(round(1000.0 / cfg.sample_rate_hz))
    n = int(T * 1000) // period_ms
    ms = np.arange(n, dtype=np.int64) * period_ms
    tau = ms / 1000.0

    # per-frame mixture: value = (1 - w) * templates[a] + w * templates[b]
    a = np.full(n, empty, dtype=np.int64)
    b = np.full(n, empty, dtype=np.int64)
    w = np.zeros(n)
    for i, (s, e, _) in enumerate(episodes):
        inside = (tau >= s) & (tau < e)
        a[inside] = i
        b[inside] = i
        if i + 1 < len(episodes):
            nxt = episodes[i + 1][0]
            cross = (tau >= e) & (tau < nxt)
            a[cross] = i
            b[cross] = i + 1
            w[cross] = (tau[cross] - e) / (nxt - e)

    amp = np.full(n, cfg.breathing.amplitude)
    half = cfg.biocal.duration_s / 2.0
    amp[(tau >= biocal_t - half) & (tau < biocal_t + half)] = cfg.biocal.amplitude
    phase = float(rng.uniform(0, 2 * np.pi))
    mod = 1.0 + amp * np.sin(2 * np.pi * cfg.breathing.rate_hz * tau + phase)

    counts = np.empty((n, geom.n_sensels), dtype=np.int32)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        sl = slice(lo, hi)
        vals = (1.0 - w[sl, None]) * templates[a[sl]] + w[sl, None] * templates[b[sl]]
        vals *= mod[sl, None]
        vals += rng.normal(0.0, cfg.noise_sigma, size=vals.shape)
        counts[sl] = np.clip(np.rint(vals * FULL_SCALE), 0, FULL_SCALE).astype(np.int32)
    counts = counts.reshape(n, *geom.shape)

    sr = geom.section_rows
    pid = f"P{patient:03d}"
    upper = DaqStream(Section.UPPER, ms / 1000.0, counts[:, :sr], cfg.sample_rate_hz)
    lower = DaqStream(Section.LOWER, (ms + drift_ms) / 1000.0, counts[:, sr:], cfg.sample_rate_hz)

    intervals = []
    for i, (s, e, pose) in enumerate(episodes):
        intervals.append((s, e, pose))
        if i + 1 < len(episodes):
            intervals.append((e, episodes[i + 1][0], PoseLabel.TRANSIENT))
    log = AnnotationLog(
        tuple(((_ms(s) + log_shift_ms) / 1000.0, (_ms(e) + log_shift_ms) / 1000.0, lab) for s, e, lab in intervals),
        (_ms(biocal_t) + log_shift_ms) / 1000.0,
    )
    truth = GroundTruth(
        pid, drift_ms / 1000.0, entry, exit_, biocal_t, log_shift_ms / 1000.0, tuple(intervals), body
    )
    return NightRecording(pid, upper, lower, log), truth


def generate_cohort(cfg: SynthConfig) -> list[tuple[NightRecording, GroundTruth]]:
    return [generate_night(cfg, p) for p in range(cfg.n_patients)]


def write_night(rec: NightRecording, truth: GroundTruth, path: str | os.PathLike) -> None:
    write_recording(rec, path)
    (Path(path) / "truth.json").write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n")


def read_truth(path: str | os.PathLike) -> GroundTruth:
    return GroundTruth.from_dict(json.loads((Path(path) / "truth.json").read_text()))


EXTERNAL_GEOMETRY = SensorGeometry(32, 64, 16)
EXTERNAL_POSES = (PoseLabel.SUPINE, PoseLabel.LEFT, PoseLabel.RIGHT)


def generate_external(
    seed: int,
    n_subjects: int = 13,
    frames_per_pose: int = 40,
    geometry: SensorGeometry = EXTERNAL_GEOMETRY,
    full_scale: float = 1000.0,
    noise_sigma: float = 0.01,
) -> tuple[dict[str, np.ndarray], dict[str, tuple[str, PoseLabel]]]:
    """High-resolution research-style dataset: integer counts in [0, full_scale].

    Returns ``(frames_by_file, entries)`` ready for :func:`write_external_dataset`.
    """
    frames_by_file, entries = {}, {}
    for s in range(n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1_000_003, s]))
        body = BodyParams.sample(rng)
        for pose in EXTERNAL_POSES:
            frames = []
            for _ in range(frames_per_pose):
                jitter = replace(
                    body,
                    col_shift_frac=float(rng.uniform(-0.05, 0.05)),
                    row_offset_frac=body.row_offset_frac + float(rng.uniform(-0.02, 0.02)),
                )
                v = template_values(pose, geometry, jitter) + rng.normal(0, noise_sigma, geometry.shape)
                frames.append(np.clip(np.rint(v * full_scale), 0, full_scale))
            name = f"S{s + 1:02d}_{pose.title.lower()}.txt"
            frames_by_file[name] = np.stack(frames)
            entries[name] = (f"S{s + 1:02d}", pose)
    return frames_by_file, entries


def write_external(path, seed: int, **kw) -> None:
    geometry = kw.pop("geometry", EXTERNAL_GEOMETRY)
    full_scale = kw.pop("full_scale", 1000.0)
    frames, entries = generate_external(seed, geometry=geometry, full_scale=full_scale, **kw)
    write_external_dataset(frames, entries, geometry, full_scale, path)


def external_as_dataset(seed: int, **kw) -> LabeledDataset:
    """In-memory equivalent of writing then reading a synthetic external dataset."""
    geometry = kw.pop("geometry", EXTERNAL_GEOMETRY)
    full_scale = kw.pop("full_scale", 1000.0)
    frames, entries = generate_external(seed, geometry=geometry, full_scale=full_scale, **kw)
    parts = []
    for name in sorted(frames):
        arr = frames[name] / full_scale
        subject, pose = entries[name]
        k = len(arr)
        parts.append(
            LabeledDataset(arr, np.arange(k, dtype=float), np.full(k, int(pose)), np.full(k, subject, object), geometry)
        )
    return LabeledDataset.concat(parts)
