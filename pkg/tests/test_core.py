import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from persense.core import (
    BBox,
    Detection,
    InstanceMask,
    PixelPoint,
    box_iou,
    iou,
    mask_bbox,
    normalize_to_gray,
    percentile,
    population_mean_std,
    round_half_away,
)


def test_gray_linear_map_rounds_half_up():
    assert normalize_to_gray(np.array([[0.0, 2.0, 1.0]])).tolist() == [[0, 255, 128]]
    assert normalize_to_gray(np.array([[0, 0.5, 1.0]])).tolist() == [[0, 128, 255]]


def test_gray_flat_grid_is_zero():
    g = normalize_to_gray(np.array([[5.0, 5.0]]))
    assert g.dtype == np.uint8 and g.tolist() == [[0, 0]]


def test_round_half_away_differs_from_bankers():
    assert round_half_away([0.5, 1.5, 2.5, -0.5, -2.5]).tolist() == [1, 2, 3, -1, -3]


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=12), elements=finite))
def test_gray_monotone_with_fixed_extremes(a):
    g = normalize_to_gray(a).astype(int).ravel()
    v = a.ravel()
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(g[order]) >= 0)
    if v.max() > v.min():
        assert g[v.argmin()] == 0 and g[v.argmax()] == 255


def test_iou_examples():
    a = np.zeros((4, 4), np.uint8)
    a[0:2, 0:2] = 1
    b = np.zeros_like(a)
    b[0:2, 1:3] = 1
    assert iou(a, a) == 1.0
    c = np.zeros_like(a)
    c[3, 3] = 1
    assert iou(a, c) == 0.0
    assert iou(a, b) == pytest.approx(2 / 6)
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


def test_iou_shape_mismatch():
    with pytest.raises(ValueError):
        iou(np.zeros((2, 2)), np.zeros((2, 3)))


masks = hnp.arrays(np.uint8, (6, 6), elements=st.integers(0, 1))


@given(masks, masks)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    if a.any():
        assert iou(a, a) == 1.0


def test_bbox_geometry_and_validation():
    b = BBox(2, 3, 5, 4)
    assert (b.width, b.height, b.area) == (4, 2, 8)
    assert b.aspect == 2.0
    assert b.contains(PixelPoint(5, 4)) and not b.contains(PixelPoint(6, 4))
    with pytest.raises(ValueError):
        BBox(3, 0, 2, 0)


def test_box_iou_partial_overlap():
    # 2x2 boxes sharing one column
    assert box_iou(BBox(0, 0, 1, 1), BBox(1, 0, 2, 1)) == pytest.approx(2 / 6)
    assert box_iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0


def test_detection_confidence_range():
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), 1.5, "x")


def test_instance_mask_caches_area_and_validates_quality():
    m = np.zeros((3, 3), bool)
    m[1, 1:] = True
    im = InstanceMask(m, 0.9)
    assert im.area == 2 and im.mask.dtype == np.uint8
    assert im.bbox() == BBox(1, 1, 2, 1)
    with pytest.raises(ValueError):
        im.mask[0, 0] = 1
    with pytest.raises(ValueError):
        InstanceMask(m, 1.2)


def test_mask_bbox_empty():
    assert mask_bbox(np.zeros((3, 3))) is None


def test_percentile_and_stats():
    assert percentile(range(1, 10), 33) == pytest.approx(3.64)
    assert percentile(range(1, 10), 66) == pytest.approx(6.28)
    mu, sd = population_mean_std([2, 4, 6])
    assert mu == 4 and sd == pytest.approx(1.632993161855452)
    with pytest.raises(ValueError):
        percentile([], 50)
