import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter, map_coordinates, zoom
from scipy.spatial import cKDTree

from uavcrack.errors import DegenerateGeometry, ImageTooSmall, StitchGraphDisconnected, TooFewMatches
from uavcrack.stitch import (
    MatchSet,
    StitchParams,
    apply_h,
    compose_mosaic,
    detect_keypoints,
    dlt_homography,
    estimate_homography_ransac,
    match_descriptors,
    stitch_images,
    symmetric_transfer_error,
    verify_match,
)
from uavcrack.stitch.homography import normalize_h
from uavcrack.stitch.sift import descriptor_matrix, keypoint_coords
from uavcrack.synthwall import crop_tiles


def texture(seed, shape=(200, 240), blur=3.0):
    rng = np.random.default_rng(seed)
    img = gaussian_filter(rng.random(shape), blur)
    return ((img - img.min()) / (img.max() - img.min()) * 255).astype(np.uint8)


@pytest.fixture(scope="module")
def tex():
    img = texture(0)
    return img, detect_keypoints(img)


def random_h(rng):
    h = np.eye(3)
    h[:2, :2] += rng.normal(0, 0.1, (2, 2))
    h[:2, 2] = rng.uniform(-30, 30, 2)
    h[2, :2] = rng.normal(0, 5e-4, 2)
    return h


# ---------- keypoints ----------

def test_uniform_image_has_no_keypoints():
    assert detect_keypoints(np.full((64, 64), 128, np.uint8)) == []


def test_small_image_rejected():
    with pytest.raises(ImageTooSmall):
        detect_keypoints(np.zeros((31, 100), np.uint8))


def test_dark_disc_found_at_center():
    yy, xx = np.mgrid[:96, :96]
    img = np.where((yy - 48) ** 2 + (xx - 50) ** 2 < 64, 0, 255).astype(np.uint8)
    kps = detect_keypoints(img)
    assert kps
    assert min(np.hypot(k.x - 50, k.y - 48) for k in kps) <= 2


def test_descriptors_unit_norm(tex):
    _, kps = tex
    d = descriptor_matrix(kps)
    assert d.shape == (len(kps), 128)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-6)


def test_repeatable_under_rescale(tex):
    img, kps = tex
    big = np.clip(zoom(img.astype(float), 1.5, order=3), 0, 255).astype(np.uint8)
    other = keypoint_coords(detect_keypoints(big))
    d, _ = cKDTree(other).query(keypoint_coords(kps) * 1.5)
    assert (d <= 3).mean() >= 0.5


def test_rotation_invariant_descriptors(tex):
    img, kps = tex
    rot = np.rot90(img).copy()
    kr = detect_keypoints(rot)
    m = match_descriptors(descriptor_matrix(kps), descriptor_matrix(kr), 0.8)
    assert len(m) >= 0.5 * len(kps)
    # np.rot90 sends (x, y) to (y, w - 1 - x)
    a = keypoint_coords(kps)[m[:, 0].astype(int)]
    b = keypoint_coords(kr)[m[:, 1].astype(int)]
    want = np.column_stack([a[:, 1], img.shape[1] - 1 - a[:, 0]])
    assert np.median(np.linalg.norm(b - want, axis=1)) < 1.0


# ---------- matching ----------

def brute_matches(a, b, ratio):
    out = []
    for i in range(len(a)):
        d = np.linalg.norm(b - a[i], axis=1)
        order = np.argsort(d, kind="stable")
        j = order[0]
        d2 = d[order[1]] if len(b) > 1 else np.inf
        back = np.argmin(np.linalg.norm(a - b[j], axis=1))
        if d[j] < ratio * d2 and back == i:
            out.append((i, j))
    return out


def test_self_matching(tex):
    d = descriptor_matrix(tex[1])
    m = match_descriptors(d, d, 0.8)
    assert m[:, 0].tolist() == m[:, 1].tolist() == list(range(len(d)))


def test_orthogonal_sets_do_not_match():
    eye = np.eye(128)
    assert len(match_descriptors(eye[:40], eye[40:80], 0.8)) == 0
    assert len(match_descriptors(np.zeros((0, 128)), eye, 0.8)) == 0


@pytest.mark.parametrize("seed", range(5))
def test_matches_equal_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(100, 128))
    b = a + rng.normal(0, 0.6, a.shape)
    b = np.vstack([b, rng.normal(size=(30, 128))])
    m = match_descriptors(a, b, 0.8)
    assert [tuple(r) for r in m[:, :2].astype(int)] == brute_matches(a, b, 0.8)


# ---------- homography ----------

def test_four_exact_points():
    rng = np.random.default_rng(1)
    h = normalize_h(random_h(rng))
    src = np.array([[0, 0], [100, 0], [100, 80], [0, 80.0]])
    got = dlt_homography(src, apply_h(h, src))
    assert np.abs(got - h).max() < 1e-6


def test_identity_correspondences():
    src = np.random.default_rng(2).uniform(0, 100, (20, 2))
    h, inl = estimate_homography_ransac(src, src, 50, 2.0, seed=0)
    np.testing.assert_allclose(h, np.eye(3), atol=1e-9)
    assert inl.all()


def test_ransac_errors():
    with pytest.raises(TooFewMatches):
        estimate_homography_ransac(np.zeros((3, 2)), np.zeros((3, 2)))
    line = np.column_stack([np.arange(10.0), np.arange(10.0)])
    with pytest.raises(DegenerateGeometry):
        estimate_homography_ransac(line, line, 20)


@pytest.mark.parametrize("seed", range(20))
def test_ransac_with_outliers(seed):
    rng = np.random.default_rng(seed)
    h = random_h(rng)
    src = rng.uniform(0, 300, (100, 2))
    dst = apply_h(h, src) + rng.normal(0, 0.3, (100, 2))
    src = np.vstack([src, rng.uniform(0, 300, (50, 2))])
    dst = np.vstack([dst, rng.uniform(-30, 330, (50, 2))])
    est, inl = estimate_homography_ransac(src, dst, 2000, 2.0, seed=seed)
    assert inl[:100].sum() >= 95
    assert np.median(np.linalg.norm(apply_h(est, src[:100]) - apply_h(h, src[:100]), axis=1)) < 1.0
    # invariants: invertible and every inlier within tolerance
    np.testing.assert_allclose(est @ np.linalg.inv(est), np.eye(3), atol=1e-9)
    assert np.all(symmetric_transfer_error(est, src[inl], dst[inl]) <= 2.0)


def test_ransac_deterministic_per_seed():
    rng = np.random.default_rng(9)
    src = rng.uniform(0, 100, (60, 2))
    dst = np.vstack([src[:40] + 5, rng.uniform(0, 100, (20, 2))])
    a = estimate_homography_ransac(src, dst, 300, 2.0, seed=4)
    b = estimate_homography_ransac(src, dst, 300, 2.0, seed=4)
    np.testing.assert_array_equal(a[0], b[0])


def test_symmetric_error_is_sum_of_both_directions():
    h = np.diag([2.0, 2.0, 1.0])
    src, dst = np.array([[1.0, 1.0]]), np.array([[3.0, 2.0]])
    # forward: |(2,2)-(3,2)| = 1; inverse: |(1.5,1)-(1,1)| = 0.5
    assert symmetric_transfer_error(h, src, dst)[0] == pytest.approx(1.5)


def matchset(putative, inliers):
    inl = np.zeros(putative, bool)
    inl[:inliers] = True
    z = np.zeros((putative, 2))
    return MatchSet(0, 1, z.astype(int), np.zeros(putative), z, z, inl, np.eye(3))


@pytest.mark.parametrize("put,inl,ok", [(10, 0, False), (100, 50, True), (100, 30, False), (100, 38, False), (100, 39, True)])
def test_verify_formula(put, inl, ok):
    assert verify_match(matchset(put, inl)) is ok


@given(st.integers(0, 500), st.integers(0, 500))
def test_verify_matches_inequality(put, inl):
    inl = min(inl, put)
    assert verify_match(matchset(put, inl)) == (inl > 8 + 0.3 * put)


# ---------- mosaic ----------

def color_texture(seed, shape=(180, 300)):
    t = texture(seed, shape, 2.0).astype(float)
    return np.stack([t, t, 0.5 * t + 60], -1).astype(np.uint8)


def test_single_image_passthrough():
    img = color_texture(3, (60, 70))
    mos, _ = stitch_images([img])
    np.testing.assert_array_equal(mos.image, img)
    assert mos.mask.all()


@pytest.fixture(scope="module")
def two_tiles():
    src = color_texture(5)
    tiles, homs = crop_tiles(src, cols=2, rows=1, overlap=0.3)
    mos, ms = stitch_images(tiles, StitchParams(), seed=0)
    return src, tiles, homs, mos, ms


def test_composite_reproduces_owner_tile(two_tiles):
    _, tiles, _, mos, _ = two_tiles
    hh, ww = mos.mask.shape
    yy, xx = np.mgrid[:hh, :ww]
    pts = np.column_stack([xx.ravel(), yy.ravel()]).astype(float)
    owner = np.full(hh * ww, -1)
    for i, (tile, h) in enumerate(zip(tiles, mos.homographies)):
        q = apply_h(np.linalg.inv(h), pts)
        th, tw = tile.shape[:2]
        owner[(q[:, 0] >= -1e-6) & (q[:, 0] <= tw - 1 + 1e-6) & (q[:, 1] >= -1e-6) & (q[:, 1] <= th - 1 + 1e-6)] = i
    np.testing.assert_array_equal(owner >= 0, mos.mask.ravel())
    for i, (tile, h) in enumerate(zip(tiles, mos.homographies)):
        sel = np.flatnonzero(owner == i)
        q = apply_h(np.linalg.inv(h), pts[sel])
        for c in range(3):
            want = map_coordinates(tile[..., c].astype(float), [q[:, 1], q[:, 0]], order=1, mode="nearest")
            assert np.abs(mos.image.reshape(-1, 3)[sel, c] - want).max() <= 0.5 + 1e-6


def test_chained_homography_matches_crop_offset(two_tiles):
    _, _, homs, mos, _ = two_tiles
    rel = np.linalg.inv(mos.homographies[0]) @ mos.homographies[1]
    true = np.linalg.inv(homs[0]) @ homs[1]
    corners = np.array([[0, 0], [100, 0], [100, 100], [0, 100.0]])
    assert np.abs(apply_h(rel, corners) - apply_h(true, corners)).max() < 0.5


def test_duplicates_give_identity():
    img = color_texture(7, (120, 140))
    mos, ms = stitch_images([img, img], StitchParams(ransac_iters=200))
    rel = np.linalg.inv(mos.to_reference[0]) @ mos.to_reference[1]
    assert np.abs(rel - np.eye(3)).max() < 1e-3
    assert ms[0].inlier_count == ms[0].putative_count


def test_disconnected_graph_lists_components():
    a, b = color_texture(11, (100, 100)), color_texture(40, (100, 100))
    with pytest.raises(StitchGraphDisconnected) as err:
        stitch_images([a, b], StitchParams(ransac_iters=200))
    assert sorted(err.value.components) == [[0], [1]]


def test_blank_fill_and_mask():
    img = color_texture(12, (100, 120))
    c, s_ = np.cos(0.2), np.sin(0.2)
    h = np.array([[c, -s_, 30.0], [s_, c, 0], [0, 0, 1]])
    # synthetic match set declaring image 1 = image 0 rotated and shifted
    src = np.random.default_rng(0).uniform(0, 80, (40, 2))
    ms = MatchSet(0, 1, np.zeros((40, 2), int), np.zeros(40), src, apply_h(np.linalg.inv(h), src), np.ones(40, bool), np.linalg.inv(h))
    mos = compose_mosaic([img, img], [ms], blank_fill=7)
    assert (mos.image[~mos.mask] == 7).all()
    assert mos.mask.sum() < mos.mask.size
