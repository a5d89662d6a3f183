import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3ae.baselines import (BASELINES, GENERAL_GREY_WORLD, MinkowskiConfig, general_grey_world, grey_world,
                            minkowski_estimate, shades_of_grey, white_patch)
from c3ae.color import DomainError, rae
from c3ae.synth import IlluminantPrior, SceneConfig, render_sample


def loop_minkowski(img, p):
    """Straight-loop oracle for the unsmoothed p-mean estimate."""
    h, w, _ = img.shape
    est = []
    for c in range(3):
        acc = 0.0
        for y in range(h):
            for x in range(w):
                acc += float(img[y, x, c]) ** p
        est.append((acc / (h * w)) ** (1.0 / p))
    norm = math.sqrt(sum(e * e for e in est))
    return np.array([e / norm for e in est])


def loop_blur(img, sigma):
    """Separable Gaussian truncated at 3 sigma with mirrored (half-sample) borders."""
    radius = int(3 * sigma + 0.5)
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    out = img.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="symmetric")
        n = out.shape[axis]
        out = sum(t * np.take(padded, np.arange(k, k + n), axis=axis) for k, t in enumerate(taps))
    return out


def test_constant_image_any_p():
    img = np.broadcast_to((0.5, 0.25, 0.25), (8, 8, 3))
    for p in (1, 2, 6, 13, math.inf):
        np.testing.assert_allclose(minkowski_estimate(img, MinkowskiConfig(p=p)), (0.8165, 0.4082, 0.4082),
                                   atol=1e-4)


def test_white_patch_takes_channel_max(rng):
    img = rng.uniform(0, 0.2, (10, 10, 3))
    img[2, 3] = (1.0, 0.1, 0.1)
    img[7, 1, 1] = 0.5
    img[0, 9, 2] = 0.25
    expected = np.array([1.0, 0.5, 0.25]) / np.linalg.norm([1.0, 0.5, 0.25])
    np.testing.assert_allclose(white_patch(img), expected, atol=1e-12)


def test_p6_matches_straight_loop(rng):
    img = rng.uniform(0, 1, (12, 9, 3))
    np.testing.assert_allclose(shades_of_grey(img), loop_minkowski(img, 6), atol=1e-9)
    np.testing.assert_allclose(minkowski_estimate(img, MinkowskiConfig(p=6)), loop_minkowski(img, 6), atol=1e-9)


def test_general_grey_world_matches_loop_oracle(rng):
    img = rng.uniform(0, 1, (20, 17, 3))
    expected = loop_minkowski(loop_blur(img, GENERAL_GREY_WORLD.sigma), GENERAL_GREY_WORLD.p)
    np.testing.assert_allclose(general_grey_world(img), expected, atol=1e-9)


def test_shades_of_grey_p1_is_grey_world(rng):
    img = rng.uniform(0, 1, (7, 7, 3))
    np.testing.assert_allclose(shades_of_grey(img, p=1), grey_world(img), atol=1e-12)


def test_grey_world_on_balanced_renders():
    cfg = SceneConfig(seed=5, balanced=True)
    prior = IlluminantPrior()
    errs = [rae(grey_world(img), ill) for img, ill in (render_sample(cfg, prior, i) for i in range(10))]
    assert max(errs) < 0.5


def test_high_p_approaches_white_patch(rng):
    # textured images; on flat mosaics the p-mean still depends on the area of the brightest patch
    for _ in range(10):
        img = rng.uniform(0, 1, (64, 64, 3)) * rng.uniform(0.3, 1, 3)
        assert rae(minkowski_estimate(img, MinkowskiConfig(p=64)), white_patch(img)) < 0.5
    errs = [rae(minkowski_estimate(img, MinkowskiConfig(p=p)), white_patch(img)) for p in (4, 16, 64, 256)]
    assert errs == sorted(errs, reverse=True)


def test_all_zero_channel_raises():
    img = np.zeros((4, 4, 3))
    img[..., 0] = 0.5
    img[..., 1] = 0.5
    for fn in BASELINES.values():
        with pytest.raises(DomainError):
            fn(img)


def test_config_validation():
    with pytest.raises(ValueError):
        MinkowskiConfig(p=0.5)
    with pytest.raises(ValueError):
        MinkowskiConfig(sigma=-1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0), st.sampled_from(sorted(BASELINES)))
def test_scale_invariance_and_unit_output(seed, s, name):
    img = np.random.default_rng(seed).uniform(0.01, 1, (16, 16, 3))
    est = BASELINES[name](img)
    assert np.linalg.norm(est) == pytest.approx(1.0)
    assert np.all(est >= 0)
    assert rae(est, BASELINES[name](s * img)) < 1e-5
