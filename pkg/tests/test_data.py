import csv

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3ae.baselines import grey_world
from c3ae.color import DomainError, as_illuminant, rae
from c3ae.data import (CCM, PATCH, SUPER_CROP, Augmentation, DatasetManifest, ManifestEntry, ManifestError,
                       UnlabeledDataError, apply_ccm, augment_patch, ccm_residual, downscale_half, evaluate,
                       fit_ccm, fit_working_size, infer_illuminant, load_manifest, manifest_checksum,
                       pool_estimates, save_manifest)
from c3ae.imageio import ImageFormatError, load_image, save_image
from c3ae.model import CAEConfig, build
from c3ae.synth import IlluminantPrior, SceneConfig, gen_dataset

# --- manifest -------------------------------------------------------------------


def test_manifest_parse(tmp_path):
    text = ("# header\n"
            "a.png\t0.5,0.6,0.7\tcamA\ttrain\t1\n"
            "b.png\t1,1,1\tcamA\tval\t1\n"
            "\n"
            "c.png\t-\tcamB\ttrain\t0\n")
    (tmp_path / "m.tsv").write_text(text, encoding="utf-8")
    m = load_manifest(tmp_path / "m.tsv")
    assert len(m) == 3
    assert [e.labeled for e in m] == [True, True, False]
    assert m.entries[0].gt == (0.5, 0.6, 0.7)
    assert m.entries[2].gt is None and m.entries[2].camera == "camB"
    assert len(m.labeled()) == 2 and len(m.unlabeled()) == 1 and len(m.split("val")) == 1
    assert m.root == tmp_path


@pytest.mark.parametrize("line, fragment", [
    ("a.png\t1,1\tc\ttrain\t1", "3 components"),
    ("a.png\t-\tc\ttrain\t1", "labeled flag"),
    ("a.png\t1,1,1\tc\ttrain\t0", "labeled flag"),
    ("a.png\t1,1,1\tc\tholdout\t1", "split"),
    ("a.png\t1,x,1\tc\ttrain\t1", "ground truth"),
    ("a.png\t1,1,1\tc\ttrain", "5 tab-separated"),
    ("a.png\t1,1,1\tc\ttrain\tyes", "0 or 1"),
    ("a.png\t0,1,1\tc\ttrain\t1", "strictly positive"),
])
def test_manifest_errors_carry_line_numbers(tmp_path, line, fragment):
    (tmp_path / "m.tsv").write_text("# ok\nfine.png\t-\tc\ttrain\t0\n" + line + "\n", encoding="utf-8")
    with pytest.raises(ManifestError, match=fragment) as info:
        load_manifest(tmp_path / "m.tsv")
    assert ":3:" in str(info.value)


def test_manifest_rejects_duplicates():
    e = ManifestEntry("a.png", None)
    with pytest.raises(ManifestError):
        DatasetManifest([e, e])


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([ManifestEntry("x.png", (0.1, 0.2, 0.3), "cam", "test", True),
                         ManifestEntry("y.png", None)], tmp_path)
    save_manifest(m, tmp_path / "m.tsv")
    assert load_manifest(tmp_path / "m.tsv").entries == m.entries
    save_manifest(m, tmp_path / "manifest.tsv")
    assert load_manifest(tmp_path).entries == m.entries


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.tsv")


# --- images -------------------------------------------------------------------

def test_sixteen_bit_max_is_one(tmp_path):
    raw = np.full((4, 5, 3), 65535, np.uint16)
    raw[0, 0] = (0, 32768, 65535)
    cv2.imwrite(str(tmp_path / "a.png"), raw)
    img = load_image(tmp_path / "a.png")
    assert img.dtype == np.float32 and img.shape == (4, 5, 3)
    assert img[1, 1].tolist() == [1.0, 1.0, 1.0]
    # stored BGR on disk, returned RGB
    np.testing.assert_allclose(img[0, 0], (1.0, 32768 / 65535, 0.0), atol=1e-7)


def test_eight_bit_png_and_gray(tmp_path):
    cv2.imwrite(str(tmp_path / "g.png"), np.array([[0, 255], [51, 102]], np.uint8))
    img = load_image(tmp_path / "g.png")
    assert img.shape == (2, 2, 3)
    np.testing.assert_allclose(img[1, 0], [0.2] * 3, atol=1e-7)


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_round_trip_quantization_bound(tmp_path, rng, suffix):
    img = rng.uniform(0, 1, (33, 47, 3))
    save_image(tmp_path / f"a{suffix}", img)
    back = load_image(tmp_path / f"a{suffix}")
    assert np.abs(back - img).max() <= 1 / 65535


def test_ppm_8bit_and_comments(tmp_path):
    body = bytes(range(12))
    (tmp_path / "a.ppm").write_bytes(b"P6\n# made by hand\n2 2\n255\n" + body)
    img = load_image(tmp_path / "a.ppm")
    np.testing.assert_allclose(img.reshape(-1), np.arange(12) / 255, atol=1e-7)


def test_image_errors(tmp_path):
    (tmp_path / "a.ppm").write_bytes(b"P6\n2 2\n1023\n" + bytes(24))
    with pytest.raises(ImageFormatError, match="maxval"):
        load_image(tmp_path / "a.ppm")
    (tmp_path / "b.ppm").write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(ImageFormatError, match="truncated"):
        load_image(tmp_path / "b.ppm")
    (tmp_path / "c.bmp").write_bytes(b"BM" + bytes(20))
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "c.bmp")
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.png")
    with pytest.raises(ImageFormatError):
        save_image(tmp_path / "x.jpg", np.zeros((2, 2, 3)))


# --- augmentation ---------------------------------------------------------------

def test_identity_augmentation_is_a_crop(rng):
    img = rng.uniform(0, 1, (120, 130, 3)).astype(np.float32)
    aug = Augmentation(top=7, left=11, angle=0.0, gains=(1.0, 1.0, 1.0))
    patch, gt = augment_patch(img, (0.5, 0.6, 0.7), aug=aug)
    off = (SUPER_CROP - PATCH) // 2
    np.testing.assert_array_equal(patch, img[7 + off:7 + off + PATCH, 11 + off:11 + off + PATCH])
    assert gt == (0.5, 0.6, 0.7)


@settings(max_examples=40, deadline=None)
@given(st.floats(-30, 30), st.tuples(*[st.floats(0.8, 1.2)] * 3))
def test_constant_image_survives_rotation(angle, gains):
    img = np.broadcast_to(np.array([0.3, 0.5, 0.7], np.float32), (100, 100, 3))
    patch, _ = augment_patch(img, None, aug=Augmentation(3, 5, angle, gains))
    np.testing.assert_allclose(patch, np.broadcast_to(np.multiply((0.3, 0.5, 0.7), gains), patch.shape), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_augmentation_label_consistency(seed):
    r = np.random.default_rng(seed)
    img = r.uniform(0, 0.8, (96, 110, 3))
    gt = r.uniform(0.2, 1, 3)
    patch, gt2 = augment_patch(img, gt, rng=np.random.default_rng(seed))
    aug_rng = np.random.default_rng(seed)
    from c3ae.data import draw_augmentation
    aug = draw_augmentation(img.shape, aug_rng)
    assert -30 <= aug.angle <= 30 and all(0.8 <= g <= 1.2 for g in aug.gains)
    np.testing.assert_allclose(gt2, np.multiply(gt, aug.gains), atol=1e-9)
    plain, _ = augment_patch(img, gt, aug=Augmentation(aug.top, aug.left, aug.angle, (1.0, 1.0, 1.0)))
    # values below 0.8 * 1.2 < 1 never clip, so dividing out the gains is exact
    np.testing.assert_allclose(patch / (np.asarray(gt2) / gt), plain, atol=1e-6)
    assert patch.shape == (64, 64, 3)


def test_unlabeled_patch_has_no_label(rng):
    _, gt = augment_patch(rng.uniform(0, 1, (92, 92, 3)), None, rng=rng)
    assert gt is None


def test_too_small_for_augmentation(rng):
    with pytest.raises(DomainError):
        augment_patch(rng.uniform(0, 1, (91, 200, 3)), None, rng=rng)


def test_large_images_fit_working_size():
    img = np.full((2160, 3840, 3), 0.25, np.float32)
    out = fit_working_size(img)
    assert out.shape == (1080, 1920, 3)
    np.testing.assert_allclose(out, 0.25, atol=1e-6)
    portrait = fit_working_size(np.zeros((3000, 1500, 3), np.float32))
    assert max(portrait.shape[:2]) <= 1920 and min(portrait.shape[:2]) <= 1080
    small = np.zeros((100, 100, 3))
    assert fit_working_size(small) is small


def test_downscale_half_box_average():
    img = np.arange(4 * 6 * 3, dtype=np.float64).reshape(4, 6, 3)
    out = downscale_half(img)
    assert out.shape == (2, 3, 3)
    np.testing.assert_allclose(out[0, 0], img[:2, :2].mean(axis=(0, 1)))


# --- inference ----------------------------------------------------------------

def test_pool_estimates_examples():
    same = np.tile([0.2, 0.5, 0.9], (5, 1))
    np.testing.assert_allclose(pool_estimates(same), as_illuminant((0.2, 0.5, 0.9)) / np.linalg.norm((0.2, 0.5, 0.9)))
    mixed = [(1, 2, 3), (2, 3, 1), (3, 1, 2), (2, 2, 2), (2, 2, 2)]
    np.testing.assert_allclose(pool_estimates(mixed), np.full(3, 1 / np.sqrt(3)))


def test_infer_illuminant_with_callable(rng):
    calls = []

    def model(batch):
        calls.append(batch.shape)
        return np.tile([0.1, 0.2, 0.2], (batch.shape[0], 1))

    est = infer_illuminant(model, rng.uniform(0, 1, (150, 140, 3)), rng)
    assert calls == [(5, 3, 64, 64)]
    np.testing.assert_allclose(est, np.array([1, 2, 2]) / 3)


def test_infer_illuminant_model_deterministic(rng):
    params = build(CAEConfig.fine_tuned(), 0)
    img = rng.uniform(0, 1, (140, 160, 3)).astype(np.float32)
    a = infer_illuminant(params, img, np.random.default_rng(3))
    b = infer_illuminant(params, img, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1) and np.all(a > 0)


def test_infer_too_small(rng):
    with pytest.raises(DomainError):
        infer_illuminant(lambda b: np.ones((len(b), 3)), rng.uniform(0, 1, (120, 200, 3)), rng)


# --- CCM ----------------------------------------------------------------------

def random_ccm(rng):
    while True:
        k = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
        if np.linalg.cond(k) < 10:
            return k


def test_fit_ccm_identity(rng):
    src = rng.uniform(0, 1, (10, 3))
    np.testing.assert_allclose(fit_ccm(src, src).matrix, np.eye(3), atol=1e-9)


def test_fit_ccm_recovers_known_matrix(rng):
    for _ in range(5):
        k = random_ccm(rng)
        src = rng.uniform(0, 1, (20, 3))
        np.testing.assert_allclose(fit_ccm(src, src @ k.T).matrix, k, atol=1e-6)


def test_fit_ccm_optimality(rng):
    k = random_ccm(rng)
    src = rng.uniform(0, 1, (30, 3))
    dst = src @ k.T + rng.normal(0, 0.02, (30, 3))
    fitted = fit_ccm(src, dst)
    best = ccm_residual(fitted, src, dst)
    assert best <= ccm_residual(CCM(np.eye(3)), src, dst)
    for _ in range(20):
        assert best <= ccm_residual(CCM(fitted.matrix + 0.01 * rng.standard_normal((3, 3))), src, dst)


def test_fit_ccm_rank_deficient():
    src = np.array([[1, 0, 0], [2, 0, 0], [0, 1, 0], [0, 3, 0]], float)
    with pytest.raises(DomainError, match="rank"):
        fit_ccm(src, src)


def test_apply_ccm(rng):
    img = rng.uniform(0.3, 0.6, (8, 8, 3))
    np.testing.assert_allclose(apply_ccm(img, CCM(np.eye(3))), img)
    k = CCM(np.eye(3) + 0.05 * rng.standard_normal((3, 3)))
    np.testing.assert_allclose(apply_ccm(apply_ccm(img, k), k.inverse()), img, atol=1e-9)
    const = np.broadcast_to((0.2, 0.3, 0.4), (5, 5, 3))
    out = apply_ccm(const, k)
    assert np.ptp(out.reshape(-1, 3), axis=0).max() == 0
    assert k.condition_number > 0


# --- evaluate -----------------------------------------------------------------

def test_evaluate_oracle_and_csv(tmp_path):
    m = gen_dataset(6, 0, SceneConfig(seed=1, width=96, height=96), IlluminantPrior(), tmp_path / "d", split="test")
    # an estimator that reads the ground truth by matching the image pixels
    images = {load_image(m.image_path(e)).tobytes(): e.gt for e in m}
    stats, results = evaluate(lambda img: np.asarray(images[img.tobytes()]), m, csv_path=tmp_path / "r.csv")
    assert max(stats.as_row()) < 1e-6
    rows = list(csv.reader((tmp_path / "r.csv").open()))
    assert rows[0] == ["path", "est_r", "est_g", "est_b", "rae_deg"]
    assert len(rows) - 1 == len(m) == len(results)


def test_evaluate_grey_world_on_balanced(tmp_path):
    m = gen_dataset(12, 0, SceneConfig(seed=2, balanced=True), IlluminantPrior(), tmp_path / "b", split="test")
    stats, _ = evaluate(grey_world, m)
    assert stats.mean < 0.5


def test_evaluate_is_order_and_worker_independent(small_dataset):
    _, test = small_dataset
    params = build(CAEConfig.fine_tuned(), 1)
    s1, r1 = evaluate(params, test, seed=5)
    s2, r2 = evaluate(params, test, seed=5, workers=3)
    assert s1 == s2 and r1 == r2


def test_evaluate_rejects_unlabeled(small_dataset):
    train, _ = small_dataset
    with pytest.raises(UnlabeledDataError):
        evaluate(grey_world, train)


def test_checksum_sensitive_to_pixels(tmp_path):
    m = gen_dataset(2, 0, SceneConfig(seed=1, width=64, height=64), IlluminantPrior(), tmp_path / "c")
    before = manifest_checksum(m)
    assert manifest_checksum(load_manifest(tmp_path / "c")) == before
    path = m.image_path(m.entries[0])
    save_image(path, load_image(path) * 0.5)
    assert manifest_checksum(m) != before
