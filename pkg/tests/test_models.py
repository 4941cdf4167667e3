import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psmpose import nn
from psmpose.data import LabeledDataset, SensorGeometry
from psmpose.models import (
    AdaptationError,
    ForestConfig,
    HeadMode,
    LinearHyper,
    MAEConfig,
    PatientOverlapError,
    PretrainHyper,
    TcnConfig,
    ViTConfig,
    ViTModel,
    FinetuneHyper,
    adapt_positional_embeddings,
    backbone_names,
    collapse_input_channels,
    finetune,
    forest_predict,
    init_vit_params,
    linear_predict,
    mae_forward,
    mae_pretrain,
    patchify,
    random_masking,
    replace_head,
    tcn_forward,
    train_forest,
    train_linear,
    unpatchify,
    vit_forward,
)
from psmpose.models.tcn import init_tcn_params
from psmpose.models.vit import to_tensors

TINY = ViTConfig((18, 18), 1, 6, embed_dim=16, depth=2, heads=2, num_classes=4)


def test_patchify_shapes_and_round_trip():
    img = np.random.default_rng(0).random((2, 1, 18, 18))
    p = patchify(img, 6)
    assert p.shape == (2, 9, 36)
    assert np.array_equal(p[0, 1], img[0, 0, 0:6, 6:12].reshape(-1))  # row-major patch order
    assert np.array_equal(unpatchify(p, TINY), img)
    const = patchify(np.full((1, 1, 18, 18), 0.3), 6)
    assert np.all(const == const[0, 0])
    with pytest.raises(ValueError):
        patchify(np.zeros((1, 1, 18, 16)), 6)


def test_config_invariants():
    with pytest.raises(ValueError):
        ViTConfig((18, 18), patch_size=5)
    with pytest.raises(ValueError):
        ViTConfig((18, 18), embed_dim=10, heads=4)


def test_vit_forward_batch_independence_and_shape():
    params = init_vit_params(TINY, seed=1)
    imgs = np.random.default_rng(1).random((8, 1, 18, 18))
    full = vit_forward(TINY, params, imgs).data
    assert full.shape == (8, 4)
    one = vit_forward(TINY, params, imgs[3:4]).data
    assert np.abs(one[0] - full[3]).max() <= 1e-6
    assert vit_forward(TINY, params, imgs, mode="encode").shape == (8, 10, 16)


def test_vit_logits_finite():
    params = init_vit_params(TINY, seed=0)
    for seed in range(100):
        img = np.random.default_rng(seed).random((1, 1, 18, 18))
        assert np.all(np.isfinite(vit_forward(TINY, params, img).data))


def test_vit_shape_mismatch():
    with pytest.raises(ValueError):
        ViTModel(TINY, init_vit_params(TINY)).predict(np.zeros((2, 18, 8)))


def test_tiny_vit_gradient_check():
    rng = np.random.default_rng(0)
    raw = init_vit_params(TINY, seed=0)
    raw = {k: v + rng.normal(0, 0.05, v.shape) for k, v in raw.items()}  # break symmetric zero init
    imgs = rng.random((2, 1, 18, 18))
    labels = np.array([1, 3])
    params = to_tensors(raw, requires_grad=True)
    nn.cross_entropy(vit_forward(TINY, params, imgs), labels).backward()

    def f():
        return float(nn.cross_entropy(vit_forward(TINY, raw, imgs), labels).data)

    with nn.no_grad():
        for k, p in params.items():
            num = nn.numerical_grad(f, raw[k])
            err = np.abs(p.grad - num).max() / max(np.abs(num).max(), np.abs(p.grad).max(), 1e-8)
            assert err <= 1e-4, k


def test_mask_count_rounding():
    assert MAEConfig(0.75).mask_count(9) == 7
    assert MAEConfig(0.5).mask_count(9) == 5  # 4.5 rounds up
    with pytest.raises(ValueError):
        MAEConfig(0.01).mask_count(9)
    with pytest.raises(ValueError):
        MAEConfig(0.99).mask_count(9)


def test_random_masking():
    keep, mask = random_masking(np.random.default_rng(0), 5, 9, 7)
    assert mask.sum(axis=1).tolist() == [7] * 5
    for k, m in zip(keep, mask):
        assert sorted(k.tolist()) == np.flatnonzero(~m).tolist()


def test_mae_encoder_sees_visible_tokens_only():
    mcfg = MAEConfig(0.75, decoder_dim=8, decoder_depth=1, decoder_heads=2)
    from psmpose.models.mae import init_decoder_params

    raw = init_vit_params(TINY, head=False)
    raw.update(init_decoder_params(TINY, mcfg))
    keep, mask = random_masking(np.random.default_rng(0), 3, 9, 7)
    loss, pred, n_enc = mae_forward(TINY, mcfg, raw, np.random.default_rng(1).random((3, 1, 18, 18)), keep, mask)
    assert n_enc == 9 - 7 + 1
    assert pred.shape == (3, 9, 36) and np.isfinite(loss.item())


def test_mae_unmasked_reconstruction_gets_no_gradient():
    pred = nn.Tensor(np.random.default_rng(0).random((2, 9, 4)), requires_grad=True)
    mask = np.zeros((2, 9), bool)
    mask[:, :3] = True
    nn.masked_mse(pred, np.zeros((2, 9, 4)), mask).backward()
    assert not pred.grad[~mask].any() and pred.grad[mask].all()


def _blob_frames(n, seed):
    """Four classes with bright blocks in different quadrants, light noise."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 4
    frames = rng.random((n, 18, 18)) * 0.1
    for i, y in enumerate(labels):
        r, c = divmod(int(y), 2)
        frames[i, r * 9 : r * 9 + 9, c * 9 : c * 9 + 9] += 0.8
    return frames, labels


def test_mae_loss_decreases():
    frames, _ = _blob_frames(64, 0)
    mcfg = MAEConfig(0.75, decoder_dim=16, decoder_depth=1, decoder_heads=2)
    first, last = [], []
    for seed in range(3):
        ck = mae_pretrain(TINY.with_(num_classes=0), mcfg, frames, PretrainHyper(2e-3, 0.05, 50, 16, seed))
        trace = ck.meta["loss_trace"]
        assert len(trace) == 50 and ck.meta["mask_count"] == 7
        first.append(trace[0])
        last.append(trace[-1])
    assert np.mean(last) < np.mean(first)


def test_adapt_positional_embeddings():
    pos = np.random.default_rng(0).random((6, 5))
    assert np.array_equal(adapt_positional_embeddings(pos, (2, 3), (2, 3)), pos)
    const = adapt_positional_embeddings(np.full((4, 3), 0.7), (2, 2), (5, 4))
    assert np.allclose(const, 0.7)
    out = adapt_positional_embeddings(np.array([[0.0], [1.0], [1.0], [0.0]]), (2, 2), (3, 3))
    assert out[4, 0] == 0.5
    with pytest.raises(AdaptationError):
        adapt_positional_embeddings(pos, (2, 3), (0, 3))


def test_collapse_input_channels():
    w = np.zeros((1, 3, 2))
    w[0, :, 1] = [1, 2, 3]
    assert collapse_input_channels(w)[0, 0].tolist() == [0, 6]
    assert not collapse_input_channels(np.zeros((4, 3, 5))).any()
    with pytest.raises(AdaptationError):
        collapse_input_channels(np.zeros((4, 2, 5)))


def test_channel_collapse_equivalence():
    rgb = TINY.with_(in_channels=3, num_classes=0)
    ck = nn.Checkpoint("vit-encoder", rgb.to_dict(), init_vit_params(rgb, seed=3, head=False))
    gray = replace_head(ck, 4, HeadMode.KEEP_BACKBONE, seed=0, target=TINY)
    src = ViTModel(rgb.with_(num_classes=4), {**ck.params, **{k: v for k, v in gray.params.items() if k.startswith("head.")}})
    x = np.random.default_rng(4).random((5, 18, 18))
    a = gray.logits(x)
    b = src.logits(x)  # prepare_images replicates the one channel to three
    assert np.abs(a - b).max() <= 1e-5


def _encoder_ckpt(cfg=TINY, seed=0):
    enc = cfg.with_(num_classes=0)
    return nn.Checkpoint("vit-encoder", enc.to_dict(), init_vit_params(enc, seed=seed, head=False))


def test_replace_head_modes():
    ck = _encoder_ckpt()
    keep = replace_head(ck, 4, HeadMode.KEEP_BACKBONE)
    names = backbone_names(ck.params)
    assert nn.checksum(keep.params, names) == nn.checksum(ck.params, names)
    assert keep.params["head.weight"].shape == (16, 4)
    pose = replace_head(ck, 4, HeadMode.VITPOSE)
    assert nn.checksum(pose.params, ["patch_embed.weight"]) != nn.checksum(ck.params, ["patch_embed.weight"])
    assert nn.checksum(pose.params, ["blocks.0.attn.qkv.weight"]) == nn.checksum(ck.params, ["blocks.0.attn.qkv.weight"])
    fresh = replace_head(ck, 4, HeadMode.REINIT, seed=9)
    assert nn.checksum(fresh.params, names) != nn.checksum(ck.params, names)
    with pytest.raises(AdaptationError):
        replace_head(ck, 4, target=TINY.with_(embed_dim=32, heads=2))


def _ds(frames, labels, patient):
    return LabeledDataset(frames, np.arange(len(frames), dtype=float), labels, [patient] * len(frames), SensorGeometry(18, 18, 9))


def test_finetune_overlap_error():
    f, y = _blob_frames(8, 0)
    with pytest.raises(PatientOverlapError):
        finetune(ViTModel(TINY, init_vit_params(TINY)), _ds(f, y, "A"), _ds(f, y, "A"), FinetuneHyper(epochs=1))


def test_finetune_separable_and_deterministic():
    f, y = _blob_frames(200, 1)
    cfg = TINY.with_(depth=1)
    hyper = FinetuneHyper(3e-3, 0.0, 50, 50, seed=2)
    vf, vy = _blob_frames(40, 2)
    ck, trace = finetune(ViTModel(cfg, init_vit_params(cfg, seed=0)), _ds(f, y, "A"), _ds(vf, vy, "B"), hyper)
    assert max(trace["train_accuracy"]) == 1.0
    assert len(trace["valid_accuracy"]) == 50
    short = FinetuneHyper(3e-3, 0.0, 2, 50, seed=2)
    a, _ = finetune(ViTModel(cfg, init_vit_params(cfg, seed=0)), _ds(f, y, "A"), None, short)
    b, _ = finetune(ViTModel(cfg, init_vit_params(cfg, seed=0)), _ds(f, y, "A"), None, short)
    assert nn.checksum(a.params) == nn.checksum(b.params)


TCN = TcnConfig(window_len=30, in_features=6, filters=8, kernel_size=15, hidden=4)


def test_tcn_shape_causality_and_receptive_field():
    params = init_tcn_params(TCN, seed=0)
    w = np.random.default_rng(0).random((3, 30, 6))
    out = tcn_forward(TCN, params, w).data
    assert out.shape == (3, 4)
    bumped = w.copy()
    bumped[:, -1] += 1.0
    assert not np.allclose(tcn_forward(TCN, params, bumped).data, out)
    far = w.copy()
    far[:, 30 - 1 - 15] += 5.0  # one frame beyond the kernel
    assert np.array_equal(tcn_forward(TCN, params, far).data, out)
    steps = tcn_forward(TCN, params, w, all_steps=True).data
    later = w.copy()
    later[:, 20] += 3.0
    steps2 = tcn_forward(TCN, params, later, all_steps=True).data
    assert np.array_equal(steps[:, :20], steps2[:, :20])
    assert np.allclose(steps[:, -1], out)
    with pytest.raises(ValueError):
        tcn_forward(TCN, params, w[:, :10])


def test_tcn_config_invariant():
    with pytest.raises(ValueError):
        TcnConfig(window_len=10, kernel_size=15)


def _blobs(seed, n=200):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.random((n, 2)) * 0.5
    X[:, 0] += y * 1.5  # class 1 sits 1.0 beyond class 0 along feature 0
    return X, y


def test_forest_examples():
    X, y = _blobs(0)
    f = train_forest(X, y, ForestConfig(n_trees=10, seed=1))
    assert (forest_predict(f, X) == y).all()
    single = train_forest(X, np.full(len(X), 2), ForestConfig(n_trees=5), n_classes=4)
    assert (forest_predict(single, X) == 2).all()
    g = train_forest(X, y, ForestConfig(n_trees=10, seed=1))
    assert all(np.array_equal(a.threshold, b.threshold) and np.array_equal(a.feature, b.feature) for a, b in zip(f.trees, g.trees))
    with pytest.raises(ValueError):
        train_forest(np.zeros((0, 2)), np.zeros(0, int))


@settings(max_examples=15)
@given(st.integers(0, 1000), st.sampled_from([np.exp, np.cbrt, lambda v: 3 * v - 7]))
def test_forest_monotone_invariance(seed, fn):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3))
    y = rng.integers(0, 3, 60)
    cfg = ForestConfig(n_trees=5, max_depth=4, seed=seed)
    Xt = X.copy()
    Xt[:, 1] = fn(X[:, 1])
    test = rng.normal(size=(40, 3))
    tt = test.copy()
    tt[:, 1] = fn(test[:, 1])
    a = forest_predict(train_forest(X, y, cfg, 3), test)
    b = forest_predict(train_forest(Xt, y, cfg, 3), tt)
    assert np.array_equal(a, b)


def test_linear_baseline():
    X, y = _blobs(1)
    m = train_linear(X, y, LinearHyper(0.1, 0.0, 300), n_classes=4)
    assert (linear_predict(m, X) == y).mean() == 1.0
    with pytest.raises(ValueError):
        train_linear(np.zeros((0, 2)), np.zeros(0, int))
