"""Shared builders for test datasets."""

from psmpose import preprocess, synth
from psmpose.data import LabeledDataset
from psmpose.sync import sync_night


def cohort_dataset(n_patients, duration_s, seed=0, params=preprocess.PreprocessParams()):
    """Synthesize, synchronize and preprocess a cohort into one LabeledDataset."""
    cfg = synth.SynthConfig(seed=seed, n_patients=n_patients, night_duration_s=duration_s)
    parts = [preprocess.preprocess_night(sync_night(rec), params) for rec, _ in synth.generate_cohort(cfg)]
    return LabeledDataset.concat(parts)


def run_pipeline(root, patients=4, duration=1200.0, seed=5):
    """Run every CLI stage on a tiny synthetic cohort; returns {stage: output dir}."""
    from psmpose import cli

    d = {k: root / k for k in ("raw", "external", "aligned", "dataset", "features", "pretrain",
                               "finetune", "eval", "report", "baseline", "tcn", "transfer", "transfer_report")}
    small_vit = ["--embed", "16", "--depth", "1", "--heads", "2"]
    steps = [
        ["synth", "--seed", str(seed), "--patients", str(patients), "--duration", str(duration), "--out", d["raw"]],
        ["synth", "--seed", str(seed), "--patients", "2", "--external", "--frames-per-pose", "4", "--out", d["external"]],
        ["sync", "--in", d["raw"], "--out", d["aligned"]],
        ["preprocess", "--in", d["aligned"], "--out", d["dataset"]],
        ["features", "--in", d["dataset"], "--out", d["features"]],
        ["pretrain", "--seed", "1", "--in", d["external"], "--steps", "3", "--batch", "8", *small_vit, "--out", d["pretrain"]],
        ["finetune", "--seed", "2", "--in", d["dataset"], "--folds", "2", "--epochs", "1",
         "--init", d["pretrain"] / "encoder.npz", "--image-size", "24", "24", "--save-model", "--out", d["finetune"]],
        ["eval", "--in", d["finetune"], "--out", d["eval"]],
        ["report", "--in", d["eval"], "--out", d["report"]],
        ["train-baseline", "--seed", "3", "--model", "forest", "--trees", "5", "--folds", "2", "--in", d["dataset"], "--out", d["baseline"]],
        ["train-baseline", "--seed", "3", "--model", "tcn", "--epochs", "1", "--window", "20", "--folds", "2",
         "--in", d["dataset"], "--out", d["tcn"]],
        ["transfer", "--seed", "4", "--source", d["external"], "--target", d["dataset"], "--steps", "2", "--epochs", "1",
         "--folds", "2", "--label-fraction", "0.3", *small_vit, "--out", d["transfer"]],
        ["report", "--in", d["transfer"], "--out", d["transfer_report"]],
    ]
    for argv in steps:
        cli.run([str(a) for a in argv])
    return d
