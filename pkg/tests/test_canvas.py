import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from strokeplan import canvas as cv

from conftest import flood_components, random_blobs

images = arrays(np.float64, (12, 12), elements=st.floats(0, 1))
masks = arrays(np.bool_, (12, 12))


def test_weighted_l1_single_pixel_matches_loop():
    a = np.zeros((10, 10))
    b = a.copy()
    b[3, 4] = 0.5
    w = np.ones((10, 10))
    total = sum(w[y, x] * abs(a[y, x] - b[y, x]) for y in range(10) for x in range(10))
    assert cv.weighted_l1(a, b, w) == pytest.approx(total / w.sum())
    assert cv.weighted_l1(a, b, w) == pytest.approx(0.005)


def test_weighted_l1_concentrated_weight():
    a = np.zeros((10, 10))
    b = a.copy()
    b[3, 4] = 0.5
    w = np.zeros((10, 10))
    w[3, 4] = 1.0
    assert cv.weighted_l1(a, b, w) == pytest.approx(0.5)


@given(images, images, arrays(np.float64, (12, 12), elements=st.floats(0.01, 5)), st.floats(0.1, 50))
def test_weighted_l1_properties(a, b, w, c):
    d = cv.weighted_l1(a, b, w)
    assert d >= 0
    assert d == cv.weighted_l1(b, a, w)
    assert cv.weighted_l1(a, a, w) == 0
    assert math.isclose(cv.weighted_l1(a, b, c * w), d, rel_tol=1e-9, abs_tol=1e-15)


def test_weighted_l1_zero_iff_agree_on_support():
    a = np.zeros((5, 5))
    b = a.copy()
    b[0, 0] = 1.0
    w = np.ones((5, 5))
    w[0, 0] = 0.0
    assert cv.weighted_l1(a, b, w) == 0.0
    w[0, 0] = 1e-3
    assert cv.weighted_l1(a, b, w) > 0.0


def test_weighted_l1_shape_mismatch():
    with pytest.raises(cv.CanvasError):
        cv.weighted_l1(np.zeros((3, 3)), np.zeros((3, 4)), np.ones((3, 3)))


def test_change_mask_identical_is_empty(rng):
    img = rng.random((20, 20))
    assert not cv.change_mask(img, img).any()


def test_change_mask_single_pixel_is_disk():
    a = np.ones((15, 15))
    b = a.copy()
    b[7, 7] = 0.0
    m = cv.change_mask(a, b, dilation_radius=2)
    expected = {(y, x) for y in range(15) for x in range(15) if (y - 7) ** 2 + (x - 7) ** 2 <= 4}
    assert set(zip(*np.nonzero(m))) == expected
    assert m.sum() == 13


def test_change_mask_threshold_one_is_empty(rng):
    assert not cv.change_mask(rng.random((10, 10)), rng.random((10, 10)), threshold=1.0).any()


@given(images, images, st.floats(0, 0.9), st.floats(0, 0.9), st.integers(0, 3), st.integers(0, 3))
def test_change_mask_monotone(a, b, t1, t2, r1, r2):
    lo_t, hi_t = sorted((t1, t2))
    lo_r, hi_r = sorted((r1, r2))
    strict = cv.change_mask(a, b, hi_t, lo_r)
    assert not (strict & ~cv.change_mask(a, b, lo_t, lo_r)).any()
    assert not (strict & ~cv.change_mask(a, b, hi_t, hi_r)).any()


def test_stroke_weights_trivial_cases():
    assert np.all(cv.stroke_weights(np.ones((6, 6), bool)) == 1.0)
    assert np.all(cv.stroke_weights(np.zeros((6, 6), bool)) == cv.WEIGHT_FLOOR)


def test_stroke_weights_distance_oracle():
    m = np.zeros((21, 21), bool)
    m[10, 10] = True
    w = cv.stroke_weights(m, decay=0.1)
    for y in range(21):
        for x in range(21):
            d = math.hypot(y - 10, x - 10)
            assert w[y, x] == pytest.approx(max(0.05, 1 - 0.1 * d), abs=1e-12)
    assert w[10, 15] == pytest.approx(0.5)


@given(masks)
def test_stroke_weights_properties(m):
    w = cv.stroke_weights(m)
    assert np.all(w[m] == 1.0)
    assert np.all(w > 0)


def test_skeleton_thin_segment_is_itself():
    m = np.zeros((10, 30), bool)
    m[5, 4:24] = True
    skel, ends = cv.skeletonize(m)
    assert np.array_equal(skel, m)
    assert sorted(ends) == [(4, 5), (23, 5)]


def test_skeleton_thick_bar_has_two_endpoints():
    m = np.zeros((20, 40), bool)
    m[8:13, 5:35] = True
    skel, ends = cv.skeletonize(m)
    assert len(ends) == 2
    ys = np.nonzero(skel)[0]
    assert ys.min() >= 8 and ys.max() <= 12
    degree = cv.neighbor_degree(skel)
    # degree oracle: exactly two degree-one pixels
    count = sum(1 for y, x in zip(*np.nonzero(skel))
                if sum(skel[y + dy, x + dx] for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                       if (dy or dx) and 0 <= y + dy < 20 and 0 <= x + dx < 40) == 1)
    assert count == 2 == int(np.count_nonzero(skel & (degree == 1)))


def test_skeleton_ring_is_closed_loop():
    yy, xx = np.mgrid[:40, :40]
    r = np.hypot(yy - 20, xx - 20)
    m = (r >= 8) & (r <= 13)
    skel, ends = cv.skeletonize(m)
    assert ends == []
    assert flood_components(skel) == 1
    assert skel[20, 20] == 0


def test_skeleton_preserves_components_on_blob_corpus():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m = random_blobs(rng)
        skel, _ = cv.skeletonize(m)
        assert not (skel & ~m).any()
        assert flood_components(skel) == flood_components(m)


def test_skeleton_empty_raises():
    with pytest.raises(cv.CanvasError):
        cv.skeletonize(np.zeros((5, 5), bool))


def test_label8_matches_flood_fill():
    rng = np.random.default_rng(8)
    for _ in range(20):
        m = rng.random((25, 25)) < 0.3
        assert cv.count_components(m) == flood_components(m)
        big = cv.largest_component(m)
        assert flood_components(big) == 1 and not (big & ~m).any()


def test_crop_resize_constant_and_identity(rng):
    img = np.full((150, 150), 0.3)
    assert np.allclose(cv.crop_resize(img, (75, 75), 120), 0.3)
    img = rng.random((150, 150))
    out = cv.crop_resize(img, (60, 70), 100)
    assert np.array_equal(out, img[20:120, 10:110])


def test_crop_resize_downscale_checkerboard():
    yy, xx = np.mgrid[:200, :200]
    img = ((yy + xx) % 2).astype(float)
    out = cv.crop_resize(img, (100, 100), 200, out_side=100)
    # output pixel i samples source coordinate 2i + 0.5, half way between a 0 and a 1
    for i in (0, 37, 99):
        for j in (0, 50, 98):
            a, b = img[2 * i, 2 * j], img[2 * i, 2 * j + 1]
            c, d = img[2 * i + 1, 2 * j], img[2 * i + 1, 2 * j + 1]
            assert out[i, j] == pytest.approx(0.25 * (a + b + c + d))
    assert np.allclose(out, 0.5)


def test_crop_resize_center_outside():
    with pytest.raises(cv.CanvasError):
        cv.crop_resize(np.zeros((10, 10)), (20, 5), 5)


def test_png_round_trips(tmp_path, rng):
    img = rng.random((30, 30))
    cv.save_gray_png(tmp_path / "a.png", img, exact=True)
    assert np.array_equal(cv.load_gray_png(tmp_path / "a.png"), img)
    cv.save_gray_png(tmp_path / "b.png", img)
    assert np.abs(cv.load_gray_png(tmp_path / "b.png") - img).max() <= 0.5 / 255 + 1e-12
    m = rng.random((30, 30)) < 0.5
    cv.save_mask_png(tmp_path / "m.png", m)
    assert np.array_equal(cv.load_mask_png(tmp_path / "m.png"), m)
