import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import flood_fill_components, naive_local_stats
from uavcrack.crack import (
    BRIGHT,
    DARK,
    DetectParams,
    SauvolaParams,
    binarize_global,
    binarize_local,
    components_mask,
    connected_components,
    detect_cracks,
    filter_candidates,
    local_stats,
    sauvola_map,
    sauvola_threshold,
)
from uavcrack.errors import InvalidParameter

small_images = arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20)))


def test_threshold_unit_example():
    assert sauvola_threshold(100.0, 64.0, 0.5, 128.0) == pytest.approx(75.0, abs=1e-9)


def test_constant_image_stats():
    m, s = local_stats(np.full((20, 25), 77, np.uint8), 7)
    assert np.all(m == 77) and np.all(s == 0)


def test_checkerboard_interior():
    y, x = np.mgrid[:9, :9]
    img = ((x + y) % 2 * 255).astype(np.uint8)
    m, s = local_stats(img, 3)
    mo, so = naive_local_stats(img, 3)
    np.testing.assert_allclose(m, mo, atol=1e-9)
    np.testing.assert_allclose(s, so, atol=1e-9)
    # interior 3x3 windows hold 5 of one color and 4 of the other
    assert set(np.round(m[1:-1, 1:-1] * 9).astype(int).ravel()) <= {4 * 255, 5 * 255}


@pytest.mark.parametrize("n", [3, 15, 31])
def test_local_stats_match_naive(rng, n):
    img = rng.integers(0, 256, (64, 64), dtype=np.uint8)
    m, s = local_stats(img, n)
    mo, so = naive_local_stats(img, n)
    assert np.abs(m - mo).max() < 1e-6 and np.abs(s - so).max() < 1e-6


@pytest.mark.parametrize("n", [2, 1, 4, 0])
def test_bad_window(n):
    with pytest.raises(InvalidParameter):
        local_stats(np.zeros((5, 5), np.uint8), n)


def test_param_validation():
    for kw in ({"window": 4}, {"R": 0}, {"k": 1.5}, {"polarity": "up"}):
        with pytest.raises(InvalidParameter):
            SauvolaParams(**kw)


@given(small_images, st.floats(0, 1))
def test_identities(img, k):
    m, s = local_stats(img, 3)
    np.testing.assert_allclose(sauvola_threshold(m, np.full_like(s, 128.0), k, 128.0), m)
    np.testing.assert_allclose(sauvola_threshold(m, s, 0.0, 128.0), m)
    np.testing.assert_allclose(sauvola_threshold(m, np.zeros_like(s), k, 128.0), m * (1 - k))


def test_k_zero_map_is_mean(rng):
    img = rng.integers(0, 256, (30, 30), dtype=np.uint8)
    np.testing.assert_allclose(sauvola_map(img, SauvolaParams(5, 0.0)), local_stats(img, 5)[0])


def test_constant_image_is_background():
    assert not binarize_local(np.full((40, 40), 150, np.uint8)).any()


def test_dark_line_on_bright_background():
    img = np.full((80, 80), 200, np.uint8)
    img[40, :] = 40
    mask = binarize_local(img, SauvolaParams(31, 0.5, 128.0))
    assert mask[40].all()
    bg = np.ones_like(mask)
    bg[40] = False
    assert 1 - mask[bg].mean() >= 0.99


@given(small_images)
def test_polarity_symmetry_on_inverse(img):
    # inverting maps m -> 255-m; with k=0 both polarities compare against the window mean
    a = binarize_local(img, SauvolaParams(3, 0.0, 128.0, DARK))
    b = binarize_local(255 - img, SauvolaParams(3, 0.0, 128.0, BRIGHT))
    np.testing.assert_array_equal(a, b)


def test_global_threshold_limits(rng):
    img = rng.integers(0, 255, (20, 20), dtype=np.uint8)
    assert not binarize_global(img, 0).any()
    assert binarize_global(img, 255).all()
    with pytest.raises(InvalidParameter):
        binarize_global(img, 300)


@given(small_images, st.floats(0, 255), st.floats(0, 255))
def test_global_monotone(img, t1, t2):
    lo, hi = sorted((t1, t2))
    assert np.all(binarize_global(img, lo) <= binarize_global(img, hi))


def test_components_trivial():
    assert connected_components(np.zeros((5, 5), bool)) == []
    m = np.zeros((4, 4), bool)
    m[1, 1] = m[2, 2] = True
    assert len(connected_components(m)) == 1
    assert len(connected_components(m, connectivity=4)) == 2


@pytest.mark.parametrize("seed", range(10))
def test_components_match_flood_fill(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((64, 64)) < rng.uniform(0.2, 0.6)
    got = sorted(sorted(zip(c.ys.tolist(), c.xs.tolist())) for c in connected_components(mask))
    want = sorted(sorted(c) for c in flood_fill_components(mask))
    assert got == want


@given(arrays(bool, st.tuples(st.integers(1, 24), st.integers(1, 24))))
def test_components_partition_foreground(mask):
    comps = connected_components(mask)
    total = sum(c.area for c in comps)
    assert total == mask.sum()
    np.testing.assert_array_equal(components_mask(mask.shape, comps), mask)
    for c in comps:
        assert c.elongation >= 1.0
        assert c.area == len(c.ys)


def test_line_kept_square_dropped():
    m = np.zeros((60, 60), bool)
    m[5, 5:55] = True
    m[20:30, 20:30] = True
    comps = connected_components(m)
    kept = filter_candidates(comps)
    assert len(comps) == 2 and len(kept) == 1
    assert kept[0].area == 50 and kept[0].bbox == (5, 5, 50, 1)
    sq = [c for c in comps if c.area == 100][0]
    assert sq.elongation == pytest.approx(1.0)


def test_diagonal_line_orientation():
    m = np.eye(40, dtype=bool)
    (c,) = connected_components(m)
    assert c.orientation == pytest.approx(np.pi / 4, abs=1e-9)


@given(arrays(bool, st.tuples(st.integers(1, 30), st.integers(1, 30))), st.integers(1, 20), st.floats(1, 6))
def test_filter_idempotent_and_shrinking(mask, area, elong):
    comps = connected_components(mask)
    once = filter_candidates(comps, area, elong)
    assert len(once) <= len(comps)
    assert filter_candidates(once, area, elong) == once


def test_report_json_schema():
    img = np.full((60, 60), 200, np.uint8)
    img[30, 5:55] = 30
    rep = detect_cracks(img, DetectParams(), "x.png")
    doc = json.loads(rep.dumps())
    assert doc["params"] == {"N": 31, "k": 0.5, "R": 128.0, "polarity": DARK}
    assert len(doc["components"]) == 1
    c = doc["components"][0]
    assert set(c) == {"area_px", "bbox", "centroid", "elongation", "orientation_rad"}
    assert np.all(rep.mask[rep.components[0].ys, rep.components[0].xs])
