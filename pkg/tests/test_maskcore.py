import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from amodalkit import maskcore as mc
from amodalkit.errors import InvalidInputError
from amodalkit.maskcore import BBox, Stratum

masks = st.integers(1, 12).flatmap(
    lambda h: st.integers(1, 12).flatmap(lambda w: hnp.arrays(bool, (h, w))))


@st.composite
def mask_and_box(draw):
    m = draw(masks)
    h, w = m.shape
    x0 = draw(st.integers(0, w - 1))
    y0 = draw(st.integers(0, h - 1))
    return m, BBox(x0, y0, draw(st.integers(x0 + 1, w)), draw(st.integers(y0 + 1, h)))


# ---------------------------------------------------------------- intersect_bbox_mask

def test_intersect_box_on_full_mask():
    out = mc.intersect_bbox_mask(BBox(2, 2, 6, 6), np.ones((8, 8), bool))
    assert out.sum() == 16
    assert out[2:6, 2:6].all()


def test_intersect_whole_image_box_is_identity(rng):
    m = rng.random((9, 7)) < 0.4
    assert np.array_equal(mc.intersect_bbox_mask(BBox(0, 0, 7, 9), m), m)


def test_intersect_rejects_box_outside_mask():
    with pytest.raises(InvalidInputError):
        mc.intersect_bbox_mask(BBox(0, 0, 9, 8), np.ones((8, 8), bool))


@given(mask_and_box())
def test_intersect_matches_pixel_loop(case):
    m, box = case
    out = mc.intersect_bbox_mask(box, m)
    assert oracles.to_lists(out) == oracles.intersect_box(box, m.tolist())
    assert not (out & ~m).any()
    assert not (out & ~mc.box_region(box, m.shape)).any()


# ---------------------------------------------------------------- expand_bbox

def test_expand_ten_percent():
    assert mc.expand_bbox(BBox(100, 100, 200, 200), 0.10, (500, 500)) == BBox(90, 90, 210, 210)


def test_expand_zero_fraction_is_identity():
    assert mc.expand_bbox(BBox(10, 20, 30, 50), 0.0, (500, 500)) == BBox(10, 20, 30, 50)


def test_expand_clamps_to_image():
    assert mc.expand_bbox(BBox(0, 0, 500, 500), 0.10, (500, 500)) == BBox(0, 0, 500, 500)


def test_expand_uses_each_dimension():
    # width 40 -> 4 px per side, height 200 -> 20 px per side
    assert mc.expand_bbox(BBox(100, 100, 140, 300), 0.10, (500, 500)) == BBox(96, 80, 144, 320)


def test_expand_rejects_negative_fraction():
    with pytest.raises(InvalidInputError):
        mc.expand_bbox(BBox(0, 0, 5, 5), -0.1, (10, 10))


@given(mask_and_box(), st.floats(0, 2))
def test_expand_monotone_and_in_bounds(case, frac):
    m, box = case
    out = mc.expand_bbox(box, frac, m.shape)
    assert out.contains(box)
    assert out.fits(m.shape)


# ---------------------------------------------------------------- occlusion ratio / strata

def test_occlusion_ratio_arithmetic():
    amodal = np.zeros((10, 10), bool)
    amodal[:, :] = True
    modal = np.zeros_like(amodal)
    modal[:4, :] = True
    assert mc.occlusion_ratio(modal, amodal) == pytest.approx(0.6)


def test_occlusion_ratio_extremes():
    m = np.zeros((4, 4), bool)
    m[1:3, 1:3] = True
    assert mc.occlusion_ratio(m, m) == 0.0
    assert mc.occlusion_ratio(np.zeros_like(m), m) == 1.0
    with pytest.raises(InvalidInputError):
        mc.occlusion_ratio(np.zeros_like(m), np.zeros_like(m))


@given(masks, st.data())
def test_occlusion_ratio_of_union(modal, data):
    extra = data.draw(hnp.arrays(bool, modal.shape))
    amodal = modal | extra
    if not amodal.any():
        return
    r = mc.occlusion_ratio(modal, amodal)
    assert 0.0 <= r <= 1.0
    assert (r == 0.0) == (not (extra & ~modal).any())


@pytest.mark.parametrize("ratio,expected", [
    (0.6, Stratum.HARD), (0.1, Stratum.EASY), (0.5, Stratum.MODERATE), (0.2, Stratum.MODERATE),
    (0.0, Stratum.EASY), (1.0, Stratum.HARD), (0.35, Stratum.MODERATE),
])
def test_stratify(ratio, expected):
    assert mc.stratify(ratio) is expected


@pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
def test_stratify_rejects_out_of_range(bad):
    with pytest.raises(InvalidInputError):
        mc.stratify(bad)


def test_strata_are_ordered():
    assert Stratum.HARD > Stratum.MODERATE > Stratum.EASY


@given(st.floats(0, 1))
def test_stratify_total(r):
    s = mc.stratify(r)
    if r > 0.5:
        assert s is Stratum.HARD
    elif r < 0.2:
        assert s is Stratum.EASY
    else:
        assert s is Stratum.MODERATE


# ---------------------------------------------------------------- touches_boundary

def test_interior_mask_does_not_touch():
    m = np.zeros((60, 60), bool)
    m[20:40, 20:40] = True
    assert not mc.touches_boundary(m, BBox(10, 10, 50, 50), band=2)


def test_pixel_on_top_edge_touches():
    m = np.zeros((60, 60), bool)
    m[10, 30] = True
    assert mc.touches_boundary(m, BBox(10, 10, 50, 50), band=1)


def test_band_width_matters():
    m = np.zeros((60, 60), bool)
    m[12, 30] = True  # two rows below the top edge
    box = BBox(10, 10, 50, 50)
    assert not mc.touches_boundary(m, box, band=2)
    assert mc.touches_boundary(m, box, band=3)


def test_touch_band_must_be_positive():
    with pytest.raises(InvalidInputError):
        mc.touches_boundary(np.ones((3, 3), bool), BBox(0, 0, 3, 3), band=0)


@given(mask_and_box(), st.integers(1, 4))
def test_touches_matches_scan(case, band):
    m, box = case
    assert mc.touches_boundary(m, box, band) == oracles.touches(m.tolist(), box, band)


# ---------------------------------------------------------------- mask_to_bbox

def test_bbox_of_single_pixel():
    m = np.zeros((8, 8), bool)
    m[3, 4] = True
    assert mc.mask_to_bbox(m) == BBox(4, 3, 5, 4)


def test_bbox_of_full_mask():
    assert mc.mask_to_bbox(np.ones((8, 8), bool)) == BBox(0, 0, 8, 8)


def test_bbox_of_empty_mask_fails():
    with pytest.raises(InvalidInputError):
        mc.mask_to_bbox(np.zeros((3, 3), bool))


@given(masks)
def test_bbox_matches_scan(m):
    expected = oracles.bbox(m.tolist())
    if expected is None:
        return
    assert tuple(mc.mask_to_bbox(m)) == expected


# ---------------------------------------------------------------- crop_with_margin

def test_crop_with_margin_arithmetic():
    img = np.zeros((600, 600, 3), np.uint8)
    crop, offset = mc.crop_with_margin(img, BBox(200, 200, 300, 300), 100)
    assert crop.shape[:2] == (300, 300)
    assert offset == (100, 100)


def test_crop_zero_margin_is_box(rng):
    img = rng.integers(0, 256, (50, 60, 3), dtype=np.uint8)
    crop, offset = mc.crop_with_margin(img, BBox(5, 7, 25, 30), 0)
    assert offset == (5, 7)
    assert np.array_equal(crop, img[7:30, 5:25])


def test_crop_clamped_at_origin():
    img = np.zeros((600, 600, 3), np.uint8)
    crop, offset = mc.crop_with_margin(img, BBox(0, 0, 50, 50), 100)
    assert offset == (0, 0)
    assert crop.shape[:2] == (150, 150)


@given(mask_and_box(), st.integers(0, 6))
def test_crop_round_trip(case, margin):
    m, box = case
    img = (np.arange(m.size * 3).reshape(*m.shape, 3) % 251).astype(np.uint8)
    crop, (ox, oy) = mc.crop_with_margin(img, box, margin)
    pasted = np.zeros_like(img)
    pasted[oy:oy + crop.shape[0], ox:ox + crop.shape[1]] = crop
    region = mc.margin_box(box, margin, img.shape)
    assert np.array_equal(pasted[region.y_min:region.y_max, region.x_min:region.x_max],
                          img[region.y_min:region.y_max, region.x_min:region.x_max])


# ---------------------------------------------------------------- compose_on_background

def test_compose_all_true_is_identity(rng):
    img = rng.integers(0, 256, (6, 5, 3), dtype=np.uint8)
    assert np.array_equal(mc.compose_on_background(img, np.ones((6, 5), bool)), img)


def test_compose_all_false_is_uniform_gray(rng):
    img = rng.integers(0, 256, (6, 5, 3), dtype=np.uint8)
    out = mc.compose_on_background(img, np.zeros((6, 5), bool), (128, 128, 128))
    assert (out == 128).all()


def test_compose_checkerboard_matches_pixel_select(rng):
    img = rng.integers(0, 256, (9, 11, 3), dtype=np.uint8)
    checker = (np.add.outer(np.arange(9), np.arange(11)) % 2).astype(bool)
    out = mc.compose_on_background(img, checker, (255, 255, 255))
    expected = oracles.compose(img.tolist(), checker.tolist(), (255, 255, 255))
    assert [[tuple(p) for p in row] for row in out.tolist()] == expected


def test_compose_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        mc.compose_on_background(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 5), bool))


# ---------------------------------------------------------------- iou and algebra

def test_iou_cases():
    a = np.zeros((6, 6), bool)
    a[1:3, 1:3] = True
    assert mc.iou(a, a) == 1.0
    b = np.zeros_like(a)
    b[4:6, 4:6] = True
    assert mc.iou(a, b) == 0.0
    shifted = np.zeros_like(a)
    shifted[1:3, 2:4] = True
    assert mc.iou(a, shifted) == pytest.approx(2 / 6)
    assert mc.iou(np.zeros_like(a), np.zeros_like(a)) == 1.0


def test_iou_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        mc.iou(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


@given(masks, st.data())
def test_iou_properties(a, data):
    b = data.draw(hnp.arrays(bool, a.shape))
    assert mc.iou(a, b) == pytest.approx(oracles.iou(a.tolist(), b.tolist()))
    assert mc.iou(a, b) == mc.iou(b, a)
    sup = a | b
    if sup.any():
        assert mc.iou(a, sup) == pytest.approx(a.sum() / sup.sum())


@given(masks, st.data())
def test_boolean_identities(a, data):
    b = data.draw(hnp.arrays(bool, a.shape))
    assert np.array_equal(mc.union(a, a), a)
    assert np.array_equal(mc.invert(mc.invert(a)), a)
    assert oracles.to_lists(mc.invert(mc.union(a, b))) == \
        oracles.intersect(oracles.invert(a.tolist()), oracles.invert(b.tolist()))
    # (1 - background) ∪ modal always contains modal
    assert not (a & ~mc.union(mc.invert(b), a)).any()


def test_union_requires_masks():
    with pytest.raises(InvalidInputError):
        mc.union()


# ---------------------------------------------------------------- serialization

@given(masks)
@settings(max_examples=50)
def test_rle_round_trip(m):
    data = mc.mask_to_rle(m)
    assert (data["height"], data["width"]) == m.shape
    assert np.array_equal(mc.mask_from_rle(data), m)


def test_rle_layout():
    m = np.array([[0, 1, 1], [1, 0, 0]], bool)
    assert mc.mask_to_rle(m) == {"height": 2, "width": 3, "runs": [1, 3]}


@pytest.mark.parametrize("bad", [{"height": 2}, {"height": 2, "width": 2, "runs": [0]},
                                 {"height": 2, "width": 2, "runs": [3, 5]}])
def test_rle_rejects_bad_input(bad):
    with pytest.raises(InvalidInputError):
        mc.mask_from_rle(bad)


def test_png_round_trip(tmp_path, rng):
    m = rng.random((13, 17)) < 0.5
    mc.save_mask(m, tmp_path / "m.png")
    assert np.array_equal(mc.load_mask(tmp_path / "m.png"), m)
    img = rng.integers(0, 256, (13, 17, 3), dtype=np.uint8)
    mc.save_image(img, tmp_path / "i.png")
    assert np.array_equal(mc.load_image(tmp_path / "i.png"), img)


def test_box_outline_is_outside_ring():
    ring = mc.box_outline(BBox(5, 5, 10, 10), (20, 20), stroke=3)
    assert not ring[5:10, 5:10].any()
    assert ring[2:13, 2:13].sum() == 11 * 11 - 25
    assert ring.sum() == 11 * 11 - 25
