import hashlib
import json

import numpy as np
import pytest

from xmodal.errors import CheckpointError
from xmodal.synthdata import (
    DRIVER_HIGH,
    DRIVER_LOW,
    SceneState,
    face_region_masks,
    generate_corpus,
    lift_matrix,
    load_corpus,
    make_sequence,
    read_stream_tensor,
    render_frame,
    synth_audio_features,
    synth_blink,
    synth_driver,
    write_stream_tensor,
)


# ---------------------------------------------------------------------------
# driver


def test_driver_deterministic():
    assert np.array_equal(synth_driver(42, 50), synth_driver(42, 50))


def test_driver_range_and_smoothness_over_1000_seeds():
    worst_delta = 0.0
    for seed in range(1000):
        d = synth_driver(seed, 50)
        assert d.min() >= DRIVER_LOW and d.max() <= DRIVER_HIGH
        worst_delta = max(worst_delta, float(np.abs(np.diff(d)).max()))
    assert worst_delta <= 0.25


def test_driver_rejects_short():
    with pytest.raises(ValueError):
        synth_driver(0, 1)


# ---------------------------------------------------------------------------
# renderer


def test_render_monotone_endpoints_and_blink():
    closed = render_frame(SceneState(0.0, 0, 0.0, 0.0), 32, 32)
    open_ = render_frame(SceneState(1.0, 0, 0.0, 0.0), 32, 32)
    masks = face_region_masks(32, 32, 0.0, 0.0)
    assert open_[masks["mouth"]].sum() > closed[masks["mouth"]].sum()

    blink = render_frame(SceneState(0.5, 1, 0.0, 0.0), 32, 32)
    noblink = render_frame(SceneState(0.5, 0, 0.0, 0.0), 32, 32)
    assert abs(blink[masks["eyes"]].mean() - noblink[masks["eyes"]].mean()) > 0.01


def test_render_pure_and_bounded():
    state = SceneState(0.3, 1, 1.0, -1.0)
    a = render_frame(state, 32, 32)
    b = render_frame(state, 32, 32)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert a.shape == (32, 32, 1)
    with pytest.raises(ValueError):
        render_frame(state, 8, 8)


def test_mouth_pixel_count_strictly_increasing():
    rng = np.random.default_rng(0)
    grid = [0.1, 0.3, 0.5, 0.7, 0.9]
    for _ in range(100):
        dx = float(rng.uniform(-1.5, 1.5))
        dy = float(rng.uniform(-1.5, 1.5))
        blink = int(rng.integers(0, 2))
        masks = face_region_masks(32, 32, dx, dy)
        counts, sums = [], []
        for d in grid:
            img = render_frame(SceneState(d, blink, dx, dy), 32, 32)
            region = img[masks["mouth"]]
            counts.append(int((region > 0.8).sum()))
            sums.append(float(region.sum()))
        assert all(b > a for a, b in zip(counts, counts[1:])), counts
        assert all(b > a for a, b in zip(sums, sums[1:]))


def test_factors_touch_only_their_regions():
    masks = face_region_masks(32, 32, 0.5, -0.5)
    base = render_frame(SceneState(0.2, 0, 0.5, -0.5), 32, 32)
    blink = render_frame(SceneState(0.2, 1, 0.5, -0.5), 32, 32)
    mouth = render_frame(SceneState(0.9, 0, 0.5, -0.5), 32, 32)
    blink_diff = np.abs(blink - base)[..., 0]
    mouth_diff = np.abs(mouth - base)[..., 0]
    assert blink_diff[~masks["eyes"]].max() == 0.0
    assert mouth_diff[~masks["mouth"]].max() == 0.0
    assert not masks["eyes"][masks["mouth"]].any()


# ---------------------------------------------------------------------------
# blink process


def test_blink_deterministic_with_two_step_closure():
    a = synth_blink(7, 200)
    assert np.array_equal(a, synth_blink(7, 200))
    assert set(np.unique(a)) <= {0.0, 1.0}
    # every onset is followed by at least one more closed step
    starts = np.where((a[1:] == 1) & (a[:-1] == 0))[0] + 1
    for s in starts:
        if s + 1 < len(a):
            assert a[s + 1] == 1.0


def test_blink_independent_of_driver():
    drivers, blinks = [], []
    for seed in range(400):
        drivers.append(synth_driver(seed, 16))
        blinks.append(synth_blink(seed + 10_000, 16))
    d = np.concatenate(drivers)
    b = np.concatenate(blinks)
    corr = np.corrcoef(d, b)[0, 1]
    assert abs(corr) < 0.05


# ---------------------------------------------------------------------------
# audio lift


def test_audio_zero_noise_reconstructs_driver_via_pseudo_inverse():
    lift = lift_matrix(3, 8)
    driver = synth_driver(5, 40).astype(np.float64)
    feats = synth_audio_features(driver, lift, noise_seed=0, noise_sigma=0.0)
    windows = feats.astype(np.float64) @ np.linalg.pinv(lift).T
    assert np.allclose(windows[:, 1], driver, atol=1e-6)


def test_audio_deterministic_and_aligned():
    lift = lift_matrix(3, 8)
    driver = synth_driver(5, 40)
    a = synth_audio_features(driver, lift, noise_seed=9)
    b = synth_audio_features(driver, lift, noise_seed=9)
    assert np.array_equal(a, b)
    assert a.shape == (40, 8)


def test_audio_sufficiency_r_squared():
    lift = lift_matrix(11, 8)
    drivers = [synth_driver(s, 50) for s in range(20)]  # 1000 pairs
    d = np.concatenate(drivers).astype(np.float64)
    feats = np.concatenate(
        [synth_audio_features(dr, lift, noise_seed=s) for s, dr in enumerate(drivers)]
    ).astype(np.float64)
    x = np.hstack([feats, np.ones((len(d), 1))])
    coef, *_ = np.linalg.lstsq(x, d, rcond=None)
    resid = d - x @ coef
    r2 = 1.0 - resid.var() / d.var()
    assert r2 > 0.99


def test_lift_requires_enough_dims():
    with pytest.raises(ValueError):
        lift_matrix(0, 3)


# ---------------------------------------------------------------------------
# corpus files


def _tiny_corpus(tmp_path, name="c", **kw):
    args = dict(seed=5, num_train=4, num_test=2, t_len=5, h=32, w=32, a_dim=8)
    args.update(kw)
    return generate_corpus(out_dir=tmp_path / name, **args)


def test_corpus_regeneration_byte_identical(tmp_path):
    m1 = _tiny_corpus(tmp_path, "one")
    m2 = _tiny_corpus(tmp_path, "two")
    assert m1.read_bytes() == m2.read_bytes()
    assert (m1.parent / "data.bin").read_bytes() == (m2.parent / "data.bin").read_bytes()


def test_corpus_round_trip_and_manifest_counts(tmp_path):
    manifest = _tiny_corpus(tmp_path)
    corpus = load_corpus(manifest)
    assert len(corpus) == 6
    assert corpus.num_train == 4 and corpus.num_test == 2
    meta = json.loads(manifest.read_text())
    assert len(meta["records"]) == meta["num_sequences"]

    lift = lift_matrix(5, 8)
    rec0 = corpus[0]
    ref = make_sequence(
        meta["records"][0]["driver_seed"],
        meta["records"][0]["nuisance_seed"],
        lift,
        5,
        32,
        32,
    )
    assert np.array_equal(rec0.frames, ref.frames)
    assert np.array_equal(rec0.audio, ref.audio)
    assert np.array_equal(rec0.driver, ref.driver)
    assert np.array_equal(rec0.blink, ref.blink)
    assert rec0.frames.shape == (5, 32, 32, 1)
    assert rec0.audio.shape == (5, 8)

    with pytest.raises(IndexError):
        corpus[6]
    with pytest.raises(IndexError):
        corpus[-1]


def test_corpus_iteration_stable_across_loads(tmp_path):
    manifest = _tiny_corpus(tmp_path)

    def digest():
        corpus = load_corpus(manifest)
        h = hashlib.sha256()
        for i in range(len(corpus)):
            rec = corpus[i]
            for arr in (rec.frames, rec.audio, rec.driver, rec.blink):
                h.update(arr.tobytes())
        return h.hexdigest()

    assert digest() == digest()


def test_same_driver_seed_different_nuisance(tmp_path):
    lift = lift_matrix(5, 8)
    a = make_sequence(77, 1, lift, 16, 32, 32)
    b = make_sequence(77, 2, lift, 16, 32, 32)
    assert np.array_equal(a.driver, b.driver)
    # audio differs only through observation noise
    assert np.abs(a.audio - b.audio).max() < 0.1
    clean_a = synth_audio_features(a.driver, lift, 0, noise_sigma=0.0)
    clean_b = synth_audio_features(b.driver, lift, 0, noise_sigma=0.0)
    assert np.array_equal(clean_a, clean_b)
    assert not np.array_equal(a.blink, b.blink)


def test_corpus_corruption_detection(tmp_path):
    manifest = _tiny_corpus(tmp_path)
    data = manifest.parent / "data.bin"
    raw = data.read_bytes()

    data.write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        load_corpus(manifest)
    data.write_bytes(raw)

    meta = json.loads(manifest.read_text())
    meta["format_version"] = 99
    bad = manifest.parent / "bad_manifest.json"
    bad.write_text(json.dumps(meta))
    with pytest.raises(CheckpointError, match="version"):
        load_corpus(bad)


def test_corpus_views_split(tmp_path):
    corpus = load_corpus(_tiny_corpus(tmp_path))
    train = corpus.train_view()
    test = corpus.test_view()
    assert len(train) == 4 and len(test) == 2
    assert np.array_equal(test[0].frames, corpus[4].frames)


def test_stream_tensor_round_trip(tmp_path):
    arr = np.random.default_rng(0).uniform(0, 1, (3, 16, 16, 1)).astype(np.float32)
    path = tmp_path / "stream.bin"
    write_stream_tensor(path, arr)
    back = read_stream_tensor(path)
    assert np.array_equal(arr, back)
    path.write_bytes(path.read_bytes() + b"x" * 4)
    with pytest.raises(CheckpointError):
        read_stream_tensor(path)


def test_generate_corpus_validation(tmp_path):
    with pytest.raises(ValueError):
        generate_corpus(0, 2, 1, 1, 32, 32, 8, tmp_path / "bad")
    with pytest.raises(ValueError):
        generate_corpus(0, 0, 1, 5, 32, 32, 8, tmp_path / "bad2")
