"""Point-cloud registration, filtering and planar-surface extraction.

Clouds are plain ``(n, 3)`` float arrays wrapped in :class:`PointCloud`; all
functions are pure and take their randomness from an explicit seed.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    DegenerateGeometry,
    InvalidParameter,
    IoError,
    MissingOrigin,
    ParseError,
    TooFewPoints,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    scan_origin: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvalidParameter("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.scan_origin is not None:
            object.__setattr__(self, "scan_origin", np.asarray(self.scan_origin, dtype=np.float64).reshape(3))

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[np.asarray(idx, dtype=np.intp)], self.scan_origin)

    def transformed(self, tf: "RigidTransform") -> "PointCloud":
        origin = None if self.scan_origin is None else tf.apply(self.scan_origin[None])[0]
        return PointCloud(tf.apply(self.points), origin)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class PlaneModel:
    """Plane ``a x + b y + c z + d = 0`` with unit normal ``(a, b, c)``."""

    coefficients: np.ndarray
    inlier_indices: np.ndarray

    @property
    def normal(self) -> np.ndarray:
        return self.coefficients[:3]

    @property
    def offset(self) -> float:
        return float(self.coefficients[3])

    def distances(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.coefficients[:3] + self.coefficients[3]


@dataclass(frozen=True)
class SurfacePatch:
    plane: PlaneModel
    boundary: np.ndarray  # (k, 2) CCW polygon in frame coordinates
    origin: np.ndarray
    axes: np.ndarray  # (2, 3) orthonormal in-plane axes

    def to_plane(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts) - self.origin) @ self.axes.T

    def to_world(self, uv: np.ndarray) -> np.ndarray:
        return self.origin + np.asarray(uv) @ self.axes

    def area(self) -> float:
        x, y = self.boundary[:, 0], self.boundary[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def to_json(self) -> dict:
        return {
            "plane": [float(v) for v in self.plane.coefficients],
            "inlier_count": int(len(self.plane.inlier_indices)),
            "frame": {
                "origin": [float(v) for v in self.origin],
                "u_axis": [float(v) for v in self.axes[0]],
                "v_axis": [float(v) for v in self.axes[1]],
            },
            "boundary": [[float(u), float(v)] for u, v in self.boundary],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SurfacePatch":
        frame = doc["frame"]
        plane = PlaneModel(np.array(doc["plane"], dtype=float), np.arange(doc.get("inlier_count", 0)))
        return cls(
            plane,
            np.array(doc["boundary"], dtype=float).reshape(-1, 2),
            np.array(frame["origin"], dtype=float),
            np.array([frame["u_axis"], frame["v_axis"]], dtype=float),
        )


@dataclass(frozen=True)
class ClusterSet:
    epsilon: float
    clusters: list[np.ndarray]

    def to_json(self) -> dict:
        return {"epsilon": float(self.epsilon), "clusters": [[int(i) for i in c] for c in self.clusters]}

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterSet":
        return cls(float(doc["epsilon"]), [np.array(c, dtype=np.intp) for c in doc["clusters"]])


def load_xyz(path: str | Path) -> PointCloud:
    """Read an ASCII ``x y z`` file; ``#`` lines are comments.

    A comment of the form ``# scan_origin x y z`` sets the scanner position.
    """
    pts = []
    origin = None
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            words = s[1:].split()
            if len(words) == 4 and words[0] == "scan_origin":
                try:
                    origin = np.array([float(w) for w in words[1:]])
                except ValueError as exc:
                    raise ParseError(str(exc), lineno) from None
            continue
        parts = s.split()
        if len(parts) != 3:
            raise ParseError(f"expected 3 coordinates, got {len(parts)}", lineno)
        try:
            xyz = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not all(np.isfinite(xyz)):
            raise ParseError("non-finite coordinate", lineno)
        pts.append(xyz)
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3), scan_origin=origin)


def save_xyz(path: str | Path, cloud: PointCloud) -> None:
    header = ""
    if cloud.scan_origin is not None:
        header = "scan_origin " + " ".join(f"{v:.6f}" for v in cloud.scan_origin)
    try:
        np.savetxt(path, cloud.points, fmt="%.6f", header=header)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def find_overlap(pa: PointCloud, pb: PointCloud, tau: float) -> list[tuple[int, int]]:
    """Pairs ``(i, j)`` whose scanner-relative coordinates differ by less than ``tau``.

    Each ``i`` is paired with its nearest qualifying ``j``; equal distances
    go to the smaller ``j``.
    """
    if pa.scan_origin is None or pb.scan_origin is None:
        raise MissingOrigin("both clouds need a scan_origin")
    if tau <= 0 or len(pa) == 0 or len(pb) == 0:
        return []
    ra = pa.points - pa.scan_origin
    rb = pb.points - pb.scan_origin
    tree = cKDTree(rb)
    pairs = []
    for i, cand in enumerate(tree.query_ball_point(ra, tau)):
        if not cand:
            continue
        cand = np.sort(np.asarray(cand, dtype=np.intp))
        d = np.linalg.norm(rb[cand] - ra[i], axis=1)
        ok = d < tau
        if not ok.any():
            continue
        cand, d = cand[ok], d[ok]
        pairs.append((i, int(cand[np.argmin(d)])))
    return pairs


def fit_rigid(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Closed-form least-squares rigid transform mapping ``src`` onto ``dst``."""
    cs, cd = src.mean(0), dst.mean(0)
    cov = (src - cs).T @ (dst - cd)
    u, sv, vt = np.linalg.svd(cov)
    if sv[0] <= 0 or sv[1] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateGeometry("correspondence covariance has rank < 2")
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, cd - rot @ cs)


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    rms: float
    history: list[float]
    iterations: int


def icp_register(
    source: PointCloud,
    target: PointCloud,
    max_iter: int = 50,
    tol: float = 1e-9,
    initial_pairs: list[tuple[int, int]] | None = None,
) -> IcpResult:
    """Point-to-point ICP aligning ``source`` onto ``target``.

    ``history`` holds the nearest-neighbour RMS before the first update and
    after every iteration; it never increases.
    """
    if len(source) == 0 or len(target) == 0:
        raise TooFewPoints("ICP needs two non-empty clouds")
    tree = cKDTree(target.points)
    src = source.points
    tf = RigidTransform()

    if initial_pairs:
        ii, jj = np.array(initial_pairs, dtype=np.intp).T
        tf = fit_rigid(src[ii], target.points[jj])

    cur = tf.apply(src)
    dist, nn = tree.query(cur)
    rms = float(np.sqrt(np.mean(dist**2)))
    history = [rms]
    it = 0
    for it in range(1, max_iter + 1):
        step = fit_rigid(cur, target.points[nn])
        cand = step.apply(cur)
        cand_dist, cand_nn = tree.query(cand)
        cand_rms = float(np.sqrt(np.mean(cand_dist**2)))
        if cand_rms > rms:  # floating-point noise at convergence
            break
        tf = step.compose(tf)
        cur, nn = cand, cand_nn
        improvement = rms - cand_rms
        rms = cand_rms
        history.append(rms)
        if improvement < tol:
            break
    return IcpResult(tf, rms, history, it)


def register_scans(clouds: list[PointCloud], tau: float = 0.05, max_iter: int = 50, tol: float = 1e-9) -> tuple[PointCloud, list[RigidTransform]]:
    """Merge scans pairwise in list order, each registered onto the running model."""
    if not clouds:
        return PointCloud(np.zeros((0, 3))), []
    merged = clouds[0]
    transforms = [RigidTransform()]
    for nxt in clouds[1:]:
        pairs = None
        if merged.scan_origin is not None and nxt.scan_origin is not None:
            pairs = [(j, i) for i, j in find_overlap(merged, nxt, tau)]
            if len(pairs) < 3:
                pairs = None
        res = icp_register(nxt, merged, max_iter, tol, initial_pairs=pairs)
        transforms.append(res.transform)
        merged = PointCloud(np.vstack([merged.points, res.transform.apply(nxt.points)]), merged.scan_origin)
    return merged, transforms


def knn_mean_distances(pts: np.ndarray, k: int) -> np.ndarray:
    dist, _ = cKDTree(pts).query(pts, k=k + 1)
    return dist[:, 1:].mean(axis=1)


def remove_outliers(cloud: PointCloud, k: int = 8, alpha: float = 1.0) -> PointCloud:
    """Statistical outlier removal on mean k-nearest-neighbour distance."""
    if k < 1:
        raise InvalidParameter("k must be >= 1")
    if len(cloud) <= k:
        raise TooFewPoints(f"need more than k={k} points, got {len(cloud)}")
    md = knn_mean_distances(cloud.points, k)
    keep = md <= md.mean() + alpha * md.std()
    return cloud.subset(np.flatnonzero(keep))


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    if not leaf > 0:
        raise InvalidParameter("leaf size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    return PointCloud(sums / counts[:, None], cloud.scan_origin)


def _canonical_plane(normal: np.ndarray, point: np.ndarray) -> np.ndarray:
    n = normal / np.linalg.norm(normal)
    if n[np.argmax(np.abs(n))] < 0:
        n = -n
    return np.append(n, -float(n @ point))


def fit_plane_lsq(pts: np.ndarray) -> np.ndarray:
    """Total-least-squares plane: normal is the smallest-eigenvalue eigenvector."""
    c = pts.mean(0)
    _, vecs = np.linalg.eigh((pts - c).T @ (pts - c))
    return _canonical_plane(vecs[:, 0], c)


def ransac_plane(cloud: PointCloud, iters: int = 500, dist_tol: float = 0.02, seed: int = 0) -> PlaneModel:
    pts = cloud.points
    n = len(pts)
    if n < 3:
        raise TooFewPoints("RANSAC plane needs at least 3 points")
    rng = np.random.default_rng(seed)
    scale = max(float(np.ptp(pts, axis=0).max()), 1e-12)
    best_count, best = -1, None
    for _ in range(iters):
        sample = pts[rng.choice(n, 3, replace=False)]
        normal = np.cross(sample[1] - sample[0], sample[2] - sample[0])
        norm = np.linalg.norm(normal)
        if norm <= 1e-12 * scale * scale:
            continue
        normal = normal / norm
        count = int(np.count_nonzero(np.abs((pts - sample[0]) @ normal) <= dist_tol))
        if count > best_count:
            best_count, best = count, (normal, sample[0])
    if best is None:
        raise DegenerateGeometry(f"all {iters} samples were collinear")

    coeffs = _canonical_plane(*best)
    inliers = np.flatnonzero(np.abs(pts @ coeffs[:3] + coeffs[3]) <= dist_tol)
    if len(inliers) >= 3:
        refit = fit_plane_lsq(pts[inliers])
        refit_inliers = np.flatnonzero(np.abs(pts @ refit[:3] + refit[3]) <= dist_tol)
        if len(refit_inliers) >= len(inliers):
            coeffs, inliers = refit, refit_inliers
    return PlaneModel(coeffs, inliers)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise, collinear vertices dropped."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise DegenerateGeometry("convex hull needs at least 3 points")
    uniq = sorted(set(map(tuple, pts)))
    if len(uniq) < 3:
        raise DegenerateGeometry("convex hull needs 3 distinct points")

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(uniq)
    upper = half(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateGeometry("all points are collinear")
    return np.array(hull)


def point_in_convex_polygon(poly: np.ndarray, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    pts = np.atleast_2d(pts)
    inside = np.ones(len(pts), dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        edge = b - a
        cross = edge[0] * (pts[:, 1] - a[1]) - edge[1] * (pts[:, 0] - a[0])
        inside &= cross >= -tol * max(np.linalg.norm(edge), 1.0)
    return inside


def plane_frame(normal: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """In-plane axes: projection of global x (global y when nearly parallel), then n × u."""
    n = normal / np.linalg.norm(normal)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = ref - (ref @ n) * n
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return np.array([u, v])


def make_patch(pts: np.ndarray, plane: PlaneModel) -> SurfacePatch:
    inl = pts[plane.inlier_indices]
    n = plane.normal
    centroid = inl.mean(0)
    origin = centroid - plane.distances(centroid[None])[0] * n
    axes = plane_frame(n, origin)
    uv = (inl - origin) @ axes.T
    return SurfacePatch(plane, convex_hull_2d(uv), origin, axes)


def extract_surfaces(
    cloud: PointCloud,
    min_inliers: int = 100,
    max_planes: int = 5,
    dist_tol: float = 0.02,
    iters: int = 500,
    seed: int = 0,
) -> tuple[list[SurfacePatch], PointCloud]:
    """Peel planes off the cloud with repeated RANSAC.

    Patch inlier indices refer to the input cloud. The residual holds every
    point not assigned to a patch.
    """
    remaining = np.arange(len(cloud))
    patches: list[SurfacePatch] = []
    rng = np.random.default_rng(seed)
    while len(patches) < max_planes and len(remaining) >= max(min_inliers, 3):
        sub = cloud.subset(remaining)
        model = ransac_plane(sub, iters, dist_tol, seed=int(rng.integers(2**31)))
        if len(model.inlier_indices) < min_inliers:
            break
        global_model = PlaneModel(model.coefficients, remaining[model.inlier_indices])
        patches.append(make_patch(cloud.points, global_model))
        remaining = np.delete(remaining, model.inlier_indices)
        log.debug("plane %d: %d inliers, normal %s", len(patches), len(model.inlier_indices), model.normal)
    return patches, cloud.subset(remaining)


def euclidean_cluster(cloud: PointCloud, epsilon: float) -> ClusterSet:
    """Single-linkage clusters under the relation ``distance <= epsilon``."""
    if not epsilon > 0:
        raise InvalidParameter("epsilon must be positive")
    n = len(cloud)
    if n == 0:
        return ClusterSet(epsilon, [])
    pairs = cKDTree(cloud.points).query_pairs(epsilon, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    # order clusters by their smallest member index
    order = {}
    for i, lab in enumerate(labels):
        order.setdefault(lab, []).append(i)
    clusters = [np.array(v, dtype=np.intp) for v in sorted(order.values(), key=lambda c: c[0])]
    return ClusterSet(epsilon, clusters)


def save_surfaces_json(path: str | Path, patches: list[SurfacePatch], clusters: ClusterSet | None = None) -> None:
    doc = {"surfaces": [p.to_json() for p in patches]}
    if clusters is not None:
        doc["obstacles"] = clusters.to_json()
    try:
        Path(path).write_text(json.dumps(doc, indent=2))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
