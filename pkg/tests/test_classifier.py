import numpy as np
import pytest

from leakaudit import classifier as clf
from leakaudit.errors import (
    DegenerateSplitError,
    DimMismatchError,
    FormatMismatchError,
    NoChunksError,
)
from leakaudit.features import FeatureSequence


def seq(n, dim=4, hop=0.01, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureSequence(rng.standard_normal((n, dim)), hop)


# --- chunking -------------------------------------------------------------------

def test_chunk_spec_from_hop():
    spec = clf.ChunkSpec.for_hop(0.010)
    assert spec.chunk_frames == 500
    assert spec.stride_frames == 400
    assert spec.overlap_frames == 100
    spec20 = clf.ChunkSpec.for_hop(0.020)
    assert (spec20.chunk_frames, spec20.stride_frames) == (250, 200)


def test_chunk_700_frames_keeps_remainder():
    spec = clf.ChunkSpec.for_hop(0.010)
    chunks = clf.chunk(seq(700), spec)
    assert [c.shape[0] for c in chunks] == [500, 300]


def test_chunk_exactly_500_single():
    spec = clf.ChunkSpec.for_hop(0.010)
    chunks = clf.chunk(seq(500), spec)
    assert [c.shape[0] for c in chunks] == [500]


def test_chunk_short_sample_zero_padded():
    spec = clf.ChunkSpec.for_hop(0.010)
    chunks = clf.chunk(seq(50), spec)
    assert [c.shape[0] for c in chunks] == [100]
    assert np.all(chunks[0][50:] == 0.0)


def test_chunk_drops_fully_covered_remainder():
    spec = clf.ChunkSpec.for_hop(0.010)
    # 900 frames: [0,500), [400,900) cover everything; remainder at 800
    # adds 100 frames of which all are covered
    chunks = clf.chunk(seq(900), spec)
    assert [c.shape[0] for c in chunks] == [500, 500]


def test_chunk_long_sequence_strides():
    spec = clf.ChunkSpec.for_hop(0.010)
    chunks = clf.chunk(seq(1300), spec)
    assert [c.shape[0] for c in chunks] == [500, 500, 500]


# --- forward --------------------------------------------------------------------

def test_forward_score_in_unit_interval():
    params = clf.init_params(4, seed=0)
    rng = np.random.default_rng(1)
    for _ in range(5):
        s = clf.forward(params, rng.standard_normal((30, 4)))
        assert 0.0 < s < 1.0


def test_forward_zero_input_gives_sigmoid_bias():
    params = clf.init_params(4, seed=0)
    params.b_proj[:] = 0.0
    params.b_conv[:] = 0.0
    x = np.zeros((20, 4))
    for mode in ("train", "eval"):
        got = clf.forward(params, x, mode=mode)
        want = 1.0 / (1.0 + np.exp(-params.b_out[0]))
        assert got == pytest.approx(want, abs=1e-12)


def test_forward_dim_mismatch():
    params = clf.init_params(4, seed=0)
    with pytest.raises(DimMismatchError):
        clf.forward(params, np.zeros((20, 5)))


def test_forward_eval_is_pure():
    params = clf.init_params(4, seed=0)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 4))
    before = params.copy()
    clf.forward(params, x, mode="eval")
    for name in clf._FIELDS + clf._BN_STATS:
        np.testing.assert_array_equal(getattr(params, name), getattr(before, name))


def test_forward_translation_invariant_interior():
    # constant-padded temporal shift only touches the convolution edges, so
    # interior-only pooling is unchanged
    params = clf.init_params(3, seed=1)
    rng = np.random.default_rng(3)
    core = rng.standard_normal((40, 3))
    pad = np.tile(core[:1], (5, 1))
    a = np.concatenate([pad, core, pad])
    b = np.concatenate([pad[:3], core, pad, pad[:2]])

    def interior_pooled(x, lo, hi):
        _, cache = clf.forward_batch(params, x[None], train=False, want_cache=True)
        return cache["a2"][0, lo:hi].mean(axis=0)

    pa = interior_pooled(a, 5, 45)
    pb = interior_pooled(b, 3, 43)
    np.testing.assert_allclose(pa, pb, atol=1e-12)


# --- gradients -------------------------------------------------------------------

def check_gradients(params, x, y, rng, coords_per_layer=20, eps=1e-4):
    """Central-difference check; coordinates whose +-eps interval flips a
    ReLU state straddle a kink (finite differences invalid there), skipped."""
    def loss_fn():
        s, cache = clf.forward_batch(params, x.copy(), train=True, want_cache=True)
        masks = (cache["a1"] > 0, cache["a2"] > 0)
        return clf.bce_loss(s, y, cache["logits"]), masks

    _, cache = clf.forward_batch(params, x.copy(), train=True, want_cache=True)
    grads = clf.backward_batch(params, y, cache)
    worst = 0.0
    for name, g in grads.items():
        flat = getattr(params, name).ravel()
        n = min(coords_per_layer, flat.size)
        for i in rng.choice(flat.size, size=n, replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            up, masks_up = loss_fn()
            flat[i] = orig - eps
            down, masks_down = loss_fn()
            flat[i] = orig
            if not all(np.array_equal(a, b) for a, b in zip(masks_up, masks_down)):
                continue
            fd = (up - down) / (2 * eps)
            an = g.ravel()[i]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    params = clf.init_params(6, seed=2)
    x = rng.standard_normal((1, 25, 6))
    y = np.array([1.0])
    assert check_gradients(params, x, y, rng) < 1e-4


def test_gradients_batched():
    rng = np.random.default_rng(5)
    params = clf.init_params(5, seed=3)
    x = rng.standard_normal((3, 17, 5))
    y = np.array([0.0, 1.0, 1.0])
    assert check_gradients(params, x, y, rng, coords_per_layer=10) < 1e-4


# --- training --------------------------------------------------------------------

def separable_chunks(n=60, frames=40, dim=6, shift=0.8, seed=0):
    rng = np.random.default_rng(seed)
    chunks, labels = [], []
    for i in range(n):
        lab = i % 2
        chunks.append(rng.standard_normal((frames, dim)) + (shift if lab else -shift))
        labels.append(lab)
    return chunks, labels


def test_train_separable_reaches_high_accuracy():
    chunks, labels = separable_chunks()
    params = clf.train(chunks, labels, clf.TrainConfig(seed=1))
    assert np.isfinite(params.final_loss)
    scores = clf.score_chunks(params, chunks)
    acc = np.mean((scores > 0.5).astype(int) == np.array(labels))
    assert acc >= 0.95


def test_train_shuffled_labels_near_chance():
    from leakaudit.audit import auc
    rng = np.random.default_rng(6)
    chunks, _ = separable_chunks(n=40, seed=7)
    aucs = []
    for seed in range(10):
        labels = rng.permutation([i % 2 for i in range(40)])
        train_c, test_c = chunks[:30], chunks[30:]
        train_l, test_l = labels[:30], labels[30:]
        if len(set(train_l)) < 2 or len(set(test_l)) < 2:
            continue
        params = clf.train(train_c, train_l,
                           clf.TrainConfig(seed=seed, epochs=10))
        aucs.append(auc(clf.score_chunks(params, test_c), test_l))
    assert 0.3 <= np.median(aucs) <= 0.7


def test_train_single_class_rejected():
    chunks, _ = separable_chunks(n=10)
    with pytest.raises(DegenerateSplitError):
        clf.train(chunks, [1] * 10, clf.TrainConfig(seed=0))


def test_train_deterministic_bitwise():
    chunks, labels = separable_chunks(n=20)
    cfg = clf.TrainConfig(seed=9, epochs=5)
    a = clf.train(chunks, labels, cfg)
    b = clf.train(chunks, labels, cfg)
    for name in clf._FIELDS + clf._BN_STATS:
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_train_mixed_chunk_lengths():
    rng = np.random.default_rng(8)
    chunks = [rng.standard_normal((n, 4)) + (0.7 if i % 2 else -0.7)
              for i, n in enumerate([30, 50, 30, 50, 40, 30, 50, 40] * 3)]
    labels = [i % 2 for i in range(len(chunks))]
    params = clf.train(chunks, labels, clf.TrainConfig(seed=2, epochs=15))
    scores = clf.score_chunks(params, chunks)
    assert np.mean((scores > 0.5).astype(int) == np.array(labels)) >= 0.9


# --- scoring ---------------------------------------------------------------------

def test_score_sample_is_mean_of_chunk_scores():
    params = clf.init_params(4, seed=4)
    rng = np.random.default_rng(9)
    chunks = [rng.standard_normal((20, 4)) for _ in range(3)]
    per_chunk = clf.score_chunks(params, chunks)
    assert clf.score_sample(params, chunks) == pytest.approx(per_chunk.mean())


def test_score_sample_single_chunk():
    params = clf.init_params(4, seed=4)
    c = np.random.default_rng(10).standard_normal((20, 4))
    assert clf.score_sample(params, [c]) == pytest.approx(
        clf.forward(params, c, mode="eval"))


def test_score_sample_permutation_invariant():
    params = clf.init_params(4, seed=4)
    rng = np.random.default_rng(11)
    chunks = [rng.standard_normal((20, 4)) for _ in range(5)]
    assert clf.score_sample(params, chunks) == pytest.approx(
        clf.score_sample(params, chunks[::-1]))


def test_score_requires_chunks():
    params = clf.init_params(4, seed=4)
    with pytest.raises(NoChunksError):
        clf.score_sample(params, [])


# --- serialization ----------------------------------------------------------------

def test_params_round_trip(tmp_path):
    chunks, labels = separable_chunks(n=12)
    params = clf.train(chunks, labels, clf.TrainConfig(seed=5, epochs=3))
    p = tmp_path / "model.lkm"
    clf.save_params(p, params)
    back = clf.load_params(p)
    for name in clf._FIELDS + clf._BN_STATS:
        np.testing.assert_array_equal(getattr(params, name), getattr(back, name))
    rng = np.random.default_rng(12)
    x = rng.standard_normal((30, 6))
    assert clf.forward(back, x) == pytest.approx(clf.forward(params, x))


def test_params_rejects_garbage(tmp_path):
    p = tmp_path / "model.lkm"
    p.write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(FormatMismatchError):
        clf.load_params(p)
