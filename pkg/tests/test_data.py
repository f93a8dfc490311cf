import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from conftest import smooth_image
from manifold_lrd.data import (
    REPORT_HEADER,
    ImageBatch,
    SynthSpec,
    landmark_error,
    load_batch,
    make_face,
    map_landmarks,
    resize,
    save_png,
    synthesize,
    synthesize_curve,
)
from manifold_lrd.errors import DegenerateSynthesisError, InvalidArgumentError, LRDError
from manifold_lrd.geometry import TransformParams, TransformStack, warp


# -- batches and loading ----------------------------------------------------


def test_batch_validation():
    with pytest.raises(InvalidArgumentError):
        ImageBatch([np.zeros((4, 4))])
    with pytest.raises(InvalidArgumentError):
        ImageBatch([np.zeros((4, 4)), np.zeros((4, 5))])
    b = ImageBatch([np.zeros((4, 4)), np.ones((4, 4))])
    assert b.matrix.shape == (16, 2) and b.shape == (4, 4) and len(b) == 2


def test_uniform_gray_directory(tmp_path):
    for i in range(64):
        Image.fromarray(np.full((8, 8), 32768, dtype=np.uint16)).save(tmp_path / f"g{i:02d}.png")
    batch = load_batch(tmp_path)
    assert len(batch) == 64
    for img in batch.images:
        np.testing.assert_allclose(img, 0.5, atol=1e-4)


def test_lexicographic_order_and_rgb_average(tmp_path):
    rgb = np.zeros((6, 6, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    Image.fromarray(rgb).save(tmp_path / "b.png")
    Image.fromarray(np.zeros((6, 6), dtype=np.uint8)).save(tmp_path / "a.png")
    batch = load_batch(tmp_path)
    assert batch.source_ids == ["a", "b"]
    np.testing.assert_allclose(batch.images[1], 1 / 3)


def test_resize_round_trip_on_smooth_image(rng):
    img = smooth_image(rng, (32, 32))
    img /= img.max()
    back = resize(resize(img, (64, 64)), (32, 32))
    assert np.abs(back - img).mean() < 2e-2


def test_load_resizes_and_round_trips_16_bit(tmp_path, rng):
    frames = [rng.random((10, 12)) for _ in range(3)]
    for i, f in enumerate(frames):
        save_png(f, tmp_path / f"f{i}.png")
    batch = load_batch(tmp_path)
    for a, b in zip(frames, batch.images):
        np.testing.assert_allclose(a, b, atol=1 / 65535)
    assert load_batch(tmp_path, (5, 6)).shape == (5, 6)


def test_load_errors(tmp_path):
    with pytest.raises(LRDError):
        load_batch(tmp_path)
    save_png(np.zeros((4, 4)), tmp_path / "ok.png")
    (tmp_path / "broken.png").write_bytes(b"not a png")
    with pytest.raises(LRDError, match="broken.png"):
        load_batch(tmp_path)
    with pytest.raises(LRDError):
        load_batch(tmp_path / "missing")


# -- synthesis --------------------------------------------------------------


def test_zero_ranges_give_identical_copies():
    res = synthesize(SynthSpec(count=5, seed=0))
    for img in res.batch.images[1:]:
        np.testing.assert_array_equal(img, res.batch.images[0])
    assert res.truth == TransformStack([TransformParams.identity("similarity")] * 5)


def test_shift_only_truth_inverts_the_shift():
    res = synthesize(SynthSpec(count=6, shift_range=3, seed=2))
    for img, F, lm in zip(res.batch.images, res.truth, res.truth_landmarks):
        s, angle, tx, ty = F.zeta
        assert (s, angle) == (1.0, 0.0) and max(abs(tx), abs(ty)) <= 3
        np.testing.assert_array_equal(img, np.clip(warp(res.base, TransformParams("translation", [-tx, -ty])), 0, 1))
        np.testing.assert_allclose(lm, res.base_landmarks + [tx, ty], atol=1e-12)


def test_truth_warp_restores_base_pose():
    res = synthesize(SynthSpec(count=4, shift_range=2, rotation_range=8, seed=3))
    for img, F in zip(res.batch.images, res.truth):
        assert np.abs(warp(img, F) - res.base)[10:-10, 10:-10].mean() < 1e-2


def test_synthesis_is_deterministic():
    spec = dict(count=6, shift_range=2, rotation_range=5, patch_count=2, patch_size=4,
                patch_intensity=1.0, gain_range=(0.8, 1.2), noise_sigma=0.02, seed=11)
    a, b = synthesize(SynthSpec(**spec)), synthesize(SynthSpec(**spec))
    for x, y in zip(a.batch.images, b.batch.images):
        np.testing.assert_array_equal(x, y)
    assert a.truth == b.truth


def test_seed_is_required():
    with pytest.raises(InvalidArgumentError):
        SynthSpec(count=4)
    with pytest.raises(InvalidArgumentError):
        SynthSpec(count=4, shift_range=-1, seed=0)


def test_image_leaving_frame_is_degenerate():
    with pytest.raises(DegenerateSynthesisError):
        synthesize(SynthSpec(count=4, shift_range=60, recenter=False, seed=0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.integers(1, 8))
def test_occlusion_covers_exact_pixel_count(seed, count, size):
    res = synthesize(SynthSpec(count=3, shape=(32, 32), patch_count=count, patch_size=size, seed=seed))
    for mask in res.occlusion_masks:
        assert mask.sum() == count * size**2


def test_curve_batch():
    batch, clean, latent = synthesize_curve(count=12, seed=1)
    assert len(batch) == len(clean) == 12 and np.all(np.diff(latent) >= 0)
    corrupted = sum(int((img != c).sum()) for img, c in zip(batch.images, clean))
    assert 0 < corrupted < 0.15 * 12 * 256


# -- landmark metric --------------------------------------------------------


def test_truth_gives_zero_error():
    res = synthesize(SynthSpec(count=5, shift_range=2, rotation_range=5, seed=5))
    rep = landmark_error(res.truth, res.truth_landmarks, res.base_landmarks, res.batch.shape)
    assert rep.max_error < 1e-12 and rep.mean_error < 1e-12


def test_identity_on_unit_shift_gives_unit_error():
    _, eyes = make_face()
    truth = [eyes + [1.0, 0.0]] * 4
    rep = landmark_error(TransformStack.identity("translation", 4), truth, eyes, (48, 48))
    assert rep.mean_error == pytest.approx(1.0)
    assert rep.error_std == pytest.approx(0.0, abs=1e-12)


def test_missing_landmarks_rejected():
    with pytest.raises(InvalidArgumentError):
        landmark_error(TransformStack.identity("translation", 2), None, None, (8, 8))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_report_ordering(seed):
    rng = np.random.default_rng(seed)
    _, eyes = make_face()
    taus = TransformStack.from_params("translation", rng.uniform(-2, 2, (2, 5)))
    truth = [eyes + rng.uniform(-2, 2, 2) for _ in range(5)]
    rep = landmark_error(taus, truth, eyes, (48, 48))
    assert rep.max_error >= rep.mean_error >= 0


def test_report_row_format():
    assert REPORT_HEADER == "Method | Mean error | Error std. | Max error"
    _, eyes = make_face()
    rep = landmark_error(TransformStack.identity("translation", 2), [eyes, eyes], eyes, (48, 48))
    assert rep.row("rasl") == "rasl | 0.0000 | 0.0000 | 0.0000"


def test_map_landmarks_uses_centred_coordinates():
    t = TransformParams("similarity", [1.0, np.pi / 2, 0.0, 0.0])
    # the frame centre is a fixed point of rotations
    np.testing.assert_allclose(map_landmarks(t, [[3.5, 3.5]], (8, 8)), [[3.5, 3.5]], atol=1e-12)
