"""Pairwise matching over an image set and homography-chained compositing."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from ..errors import DegenerateGeometry, StitchGraphDisconnected, TooFewMatches
from ..imaging import check_raster, to_gray
from .homography import MatchSet, apply_h, estimate_homography_ransac, normalize_h, verify_match
from .matching import match_descriptors
from .sift import Keypoint, SiftParams, descriptor_matrix, detect_keypoints, keypoint_coords

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StitchParams:
    ratio: float = 0.8
    ransac_iters: int = 2000
    inlier_tol: float = 2.0
    verify_alpha: float = 8.0
    verify_beta: float = 0.3
    blank_fill: int = 0
    sift: SiftParams = field(default_factory=SiftParams)


@dataclass(frozen=True)
class Mosaic:
    image: np.ndarray
    mask: np.ndarray  # True where some input image maps
    reference: int
    homographies: list[np.ndarray]  # image pixel -> mosaic pixel
    to_reference: list[np.ndarray]  # image pixel -> reference-image pixel
    offset: np.ndarray  # mosaic pixel = reference pixel + offset
    tree: list[tuple[int, int]]


def match_pair(
    a: int,
    b: int,
    kps_a: list[Keypoint],
    kps_b: list[Keypoint],
    params: StitchParams = StitchParams(),
    seed: int = 0,
) -> MatchSet:
    raw = match_descriptors(descriptor_matrix(kps_a), descriptor_matrix(kps_b), params.ratio)
    idx = raw[:, :2].astype(np.intp)
    src = keypoint_coords(kps_a)[idx[:, 0]] if len(idx) else np.zeros((0, 2))
    dst = keypoint_coords(kps_b)[idx[:, 1]] if len(idx) else np.zeros((0, 2))
    h, inl = None, np.zeros(len(idx), dtype=bool)
    try:
        h, inl = estimate_homography_ransac(src, dst, params.ransac_iters, params.inlier_tol, seed)
    except (TooFewMatches, DegenerateGeometry) as exc:
        log.debug("pair (%d, %d): %s", a, b, exc)
    return MatchSet(a, b, idx, raw[:, 2], src, dst, inl, h)


def match_all(
    keypoints: list[list[Keypoint]], params: StitchParams = StitchParams(), seed: int = 0
) -> list[MatchSet]:
    """Exhaustive pairwise matching; RANSAC seeds derive from ``seed`` and the pair."""
    out = []
    n = len(keypoints)
    for a in range(n):
        for b in range(a + 1, n):
            ms = match_pair(a, b, keypoints[a], keypoints[b], params, seed=seed * 1_000_003 + a * n + b)
            log.info("pair (%d, %d): %d putative, %d inliers", a, b, ms.putative_count, ms.inlier_count)
            out.append(ms)
    return out


def _components(n: int, edges) -> list[list[int]]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        parent[find(a)] = find(b)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def chain_homographies(n: int, verified: list[MatchSet]) -> tuple[int, list[np.ndarray], list[tuple[int, int]]]:
    """Reference image and image->reference homographies along a max-inlier spanning tree."""
    comps = _components(n, [(m.a, m.b) for m in verified])
    if len(comps) > 1:
        raise StitchGraphDisconnected(comps)
    degree = np.zeros(n, dtype=int)
    for m in verified:
        degree[m.a] += 1
        degree[m.b] += 1
    ref = int(np.argmax(degree))  # ties -> lowest id

    # Kruskal on descending inlier count
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    tree: list[MatchSet] = []
    for m in sorted(verified, key=lambda m: (-m.inlier_count, m.a, m.b)):
        ra, rb = find(m.a), find(m.b)
        if ra != rb:
            parent[ra] = rb
            tree.append(m)

    adj: dict[int, list[tuple[int, np.ndarray]]] = {i: [] for i in range(n)}
    for m in tree:
        adj[m.a].append((m.b, m.h))  # a -> b
        adj[m.b].append((m.a, np.linalg.inv(m.h)))  # b -> a
    to_ref: list[np.ndarray | None] = [None] * n
    to_ref[ref] = np.eye(3)
    queue = deque([ref])
    while queue:
        p = queue.popleft()
        for c, h_pc in adj[p]:
            if to_ref[c] is None:
                # h_pc maps p -> c, so c -> ref is to_ref[p] @ inv(h_pc)
                to_ref[c] = normalize_h(to_ref[p] @ np.linalg.inv(h_pc))
                queue.append(c)
    return ref, to_ref, [(m.a, m.b) for m in tree]


def compose_mosaic(
    images: list[np.ndarray],
    matchsets: list[MatchSet],
    blank_fill: int = 0,
    verify_alpha: float = 8.0,
    verify_beta: float = 0.3,
) -> Mosaic:
    """Warp every image into the reference frame; later ids overwrite earlier ones."""
    images = [check_raster(im) for im in images]
    n = len(images)
    verified = [m for m in matchsets if verify_match(m, verify_alpha, verify_beta)]
    ref, to_ref, tree = chain_homographies(n, verified)

    corners = []
    for im, h in zip(images, to_ref):
        hgt, wid = im.shape[:2]
        corners.append(apply_h(h, np.array([[0, 0], [wid - 1, 0], [wid - 1, hgt - 1], [0, hgt - 1]], dtype=float)))
    allc = np.vstack(corners)
    lo = np.floor(allc.min(0) + 1e-6)
    hi = np.ceil(allc.max(0) - 1e-6)
    out_w, out_h = int(hi[0] - lo[0]) + 1, int(hi[1] - lo[1]) + 1
    shift = np.array([[1, 0, -lo[0]], [0, 1, -lo[1]], [0, 0, 1.0]])

    color = images[0].ndim == 3
    shape = (out_h, out_w, 3) if color else (out_h, out_w)
    canvas = np.full(shape, blank_fill, dtype=np.uint8)
    mask = np.zeros((out_h, out_w), dtype=bool)
    to_canvas = []
    for im, h, cs in zip(images, to_ref, corners):
        hc = shift @ h
        to_canvas.append(normalize_h(hc))
        cc = cs - lo
        x0, y0 = np.maximum(np.floor(cc.min(0)).astype(int), 0)
        x1, y1 = np.minimum(np.ceil(cc.max(0)).astype(int), [out_w - 1, out_h - 1])
        yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        src = apply_h(np.linalg.inv(hc), np.column_stack([xx.ravel(), yy.ravel()]).astype(float))
        hgt, wid = im.shape[:2]
        eps = 1e-6
        ok = (src[:, 0] >= -eps) & (src[:, 0] <= wid - 1 + eps) & (src[:, 1] >= -eps) & (src[:, 1] <= hgt - 1 + eps)
        if not ok.any():
            continue
        sx = np.clip(src[ok, 0], 0, wid - 1)
        sy = np.clip(src[ok, 1], 0, hgt - 1)
        ty, tx = yy.ravel()[ok], xx.ravel()[ok]
        chans = [im[..., c] for c in range(3)] if color else [im]
        for c, ch in enumerate(chans):
            vals = map_coordinates(ch.astype(np.float64), [sy, sx], order=1, mode="nearest")
            vals = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
            if color:
                canvas[ty, tx, c] = vals
            else:
                canvas[ty, tx] = vals
        mask[ty, tx] = True
    return Mosaic(canvas, mask, ref, to_canvas, [normalize_h(h) for h in to_ref], -lo, tree)


def stitch_images(images: list[np.ndarray], params: StitchParams = StitchParams(), seed: int = 0) -> tuple[Mosaic, list[MatchSet]]:
    """Detect, match, verify and composite a list of overlapping images."""
    images = [check_raster(im) for im in images]
    if len(images) == 1:
        im = images[0]
        mask = np.ones(im.shape[:2], dtype=bool)
        return Mosaic(im.copy(), mask, 0, [np.eye(3)], [np.eye(3)], np.zeros(2), []), []
    grays = [to_gray(im) if im.ndim == 3 else im for im in images]
    kps = []
    for i, g in enumerate(grays):
        kps.append(detect_keypoints(g, params.sift))
        log.info("image %d: %d keypoints", i, len(kps[-1]))
    matchsets = match_all(kps, params, seed)
    mosaic = compose_mosaic(images, matchsets, params.blank_fill, params.verify_alpha, params.verify_beta)
    return mosaic, matchsets


def homographies_json(mosaic: Mosaic, matchsets: list[MatchSet]) -> dict:
    return {
        "reference": mosaic.reference,
        "offset": [float(v) for v in mosaic.offset],
        "to_mosaic": [h.tolist() for h in mosaic.homographies],
        "tree": [list(e) for e in mosaic.tree],
        "pairs": [
            {
                "a": m.a,
                "b": m.b,
                "putative": m.putative_count,
                "inliers": m.inlier_count,
                "H": None if m.h is None else m.h.tolist(),
            }
            for m in matchsets
        ],
    }
