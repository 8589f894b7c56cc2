"""Normalized DLT homographies, RANSAC estimation and match verification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateGeometry, TooFewMatches


def normalize_h(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if abs(h[2, 2]) < 1e-15:
        raise DegenerateGeometry("homography has H[2,2] = 0")
    return h / h[2, 2]


def apply_h(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    q = pts @ h[:, :2].T + h[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return q[:, :2] / q[:, 2:3]


def hartley_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    c = pts.mean(0)
    md = np.linalg.norm(pts - c, axis=1).mean()
    s = np.sqrt(2.0) / md if md > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Stacked DLT design matrix for (..., n, 2) point arrays -> (..., 2n, 9)."""
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    z, o = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -o, z, z, z, u * x, u * y, u], axis=-1)
    r2 = np.stack([z, z, z, -x, -y, -o, v * x, v * y, v], axis=-1)
    return np.concatenate([r1, r2], axis=-2)


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares homography with Hartley normalization, mapping src -> dst."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 4:
        raise TooFewMatches("homography needs at least 4 correspondences")
    ts, td = hartley_transform(src), hartley_transform(dst)
    sn = src @ ts[:2, :2].T + ts[:2, 2]
    dn = dst @ td[:2, :2].T + td[:2, 2]
    _, sv, vt = np.linalg.svd(_dlt_rows(sn, dn))
    if sv[-2] <= 1e-12 * sv[0]:
        raise DegenerateGeometry("correspondences do not determine a homography")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.solve(td, hn @ ts)
    if abs(np.linalg.det(h)) < 1e-12 * abs(h[2, 2]) ** 3:
        raise DegenerateGeometry("singular homography")
    return normalize_h(h)


def symmetric_transfer_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Forward plus inverse reprojection distance for each correspondence."""
    hinv = np.linalg.inv(h)
    fwd = np.linalg.norm(apply_h(h, src) - dst, axis=1)
    back = np.linalg.norm(apply_h(hinv, dst) - src, axis=1)
    err = fwd + back
    return np.where(np.isfinite(err), err, np.inf)


def _collinear(p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """True where any 3 of the 4 points in each (iters, 4, 2) sample are nearly collinear."""
    bad = np.zeros(p.shape[0], dtype=bool)
    scale = np.ptp(p, axis=1).max(axis=1) ** 2 + 1e-300
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a, b = p[:, j] - p[:, i], p[:, k] - p[:, i]
        bad |= np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) <= tol * scale
    return bad


def _batch_minimal(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized 4-point DLT for every sample in (iters, 4, 2) arrays."""

    def norm_batch(p):
        c = p.mean(1, keepdims=True)
        md = np.linalg.norm(p - c, axis=2).mean(1)
        s = np.sqrt(2.0) / np.where(md > 0, md, 1.0)
        t = np.zeros((len(p), 3, 3))
        t[:, 0, 0] = t[:, 1, 1] = s
        t[:, 0, 2] = -s * c[:, 0, 0]
        t[:, 1, 2] = -s * c[:, 0, 1]
        t[:, 2, 2] = 1.0
        return t, (p - c) * s[:, None, None]

    ts, sn = norm_batch(src)
    td, dn = norm_batch(dst)
    _, _, vt = np.linalg.svd(_dlt_rows(sn, dn))
    hn = vt[:, -1].reshape(-1, 3, 3)
    return np.linalg.solve(td, hn @ ts)


@dataclass(frozen=True)
class MatchSet:
    """Putative matches between images ``a`` and ``b``; ``h`` maps a-pixels to b-pixels."""

    a: int
    b: int
    matches: np.ndarray  # (k, 2) int index pairs into keypoints of a and b
    distances: np.ndarray
    src: np.ndarray  # (k, 2) coordinates in a
    dst: np.ndarray  # (k, 2) coordinates in b
    inliers: np.ndarray  # (k,) bool
    h: np.ndarray | None

    @property
    def putative_count(self) -> int:
        return int(len(self.matches))

    @property
    def inlier_count(self) -> int:
        return int(np.count_nonzero(self.inliers))


def estimate_homography_ransac(
    src: np.ndarray,
    dst: np.ndarray,
    iters: int = 2000,
    inlier_tol: float = 2.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """RANSAC over 4-point normalized DLT, scored by symmetric transfer error.

    Returns ``(H, inlier_mask)``; H is refit on the consensus set until the
    set stops changing.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise TooFewMatches(f"need at least 4 matches, got {n}")
    rng = np.random.default_rng(seed)
    samples = np.array([rng.choice(n, 4, replace=False) for _ in range(iters)]).reshape(-1, 4)
    ok = ~(_collinear(src[samples]) | _collinear(dst[samples]))
    samples = samples[ok]
    if len(samples) == 0:
        raise DegenerateGeometry("every RANSAC sample was degenerate")

    best_count, best_err, best_h = -1, np.inf, None
    chunk = 256
    for start in range(0, len(samples), chunk):
        block = samples[start : start + chunk]
        with np.errstate(all="ignore"):
            hs = _batch_minimal(src[block], dst[block])
            for h in hs:
                if not np.all(np.isfinite(h)) or abs(h[2, 2]) < 1e-12:
                    continue
                h = h / h[2, 2]
                if abs(np.linalg.det(h)) < 1e-12:
                    continue
                err = symmetric_transfer_error(h, src, dst)
                inl = err <= inlier_tol
                count = int(inl.sum())
                total = float(err[inl].sum())
                if count > best_count or (count == best_count and total < best_err):
                    best_count, best_err, best_h = count, total, h
    if best_h is None:
        raise DegenerateGeometry("no non-degenerate homography hypothesis")

    h = best_h
    inl = symmetric_transfer_error(h, src, dst) <= inlier_tol
    for _ in range(10):
        if inl.sum() < 4:
            break
        try:
            refit = dlt_homography(src[inl], dst[inl])
        except DegenerateGeometry:
            break
        new_inl = symmetric_transfer_error(refit, src, dst) <= inlier_tol
        if new_inl.sum() < inl.sum():
            break
        h = refit
        if np.array_equal(new_inl, inl):
            break
        inl = new_inl
    inl = symmetric_transfer_error(h, src, dst) <= inlier_tol
    return normalize_h(h), inl


def verify_match(ms: MatchSet, alpha: float = 8.0, beta_v: float = 0.3) -> bool:
    """Accept a pairwise match when inliers > alpha + beta_v * putative matches."""
    if ms.h is None:
        return False
    return ms.inlier_count > alpha + beta_v * ms.putative_count
