"""Voxel occupancy, shooting-point layout and weighted A* waypoint planning."""
from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation

from .errors import (
    DegenerateGeometry,
    InvalidEndpoint,
    InvalidMove,
    InvalidParameter,
    IoError,
    OutOfBounds,
    Unreachable,
)
from .pointcloud import SurfacePatch

SHOOTING = "shooting"
INTERMEDIATE = "intermediate"

# the 26 neighbour offsets in lexicographic order
MOVES = [m for m in itertools.product((-1, 0, 1), repeat=3) if m != (0, 0, 0)]


@dataclass(frozen=True)
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray  # bool, shape (nx, ny, nz)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.occupancy.shape)

    def voxel_of(self, p) -> tuple[int, int, int]:
        idx = np.floor((np.asarray(p, dtype=float) - self.origin) / self.resolution).astype(int)
        idx = np.minimum(idx, np.array(self.dims) - 1)
        if np.any(idx < 0):
            raise OutOfBounds(f"point {p} outside grid")
        return tuple(int(i) for i in idx)

    def center_of(self, v) -> np.ndarray:
        return self.origin + (np.asarray(v, dtype=float) + 0.5) * self.resolution

    def in_grid(self, v) -> bool:
        return all(0 <= v[i] < self.dims[i] for i in range(3))

    def is_free(self, v) -> bool:
        return self.in_grid(v) and not self.occupancy[v]


@dataclass(frozen=True)
class CameraModel:
    focal_length: float = 34.4  # mm
    sensor_width: float = 6.17  # mm
    sensor_height: float = 4.63  # mm
    pixel_cols: int = 4000
    pixel_rows: int = 3000

    def __post_init__(self):
        for name in ("focal_length", "sensor_width", "sensor_height", "pixel_cols", "pixel_rows"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"camera {name} must be positive")

    def standoff_mm(self, gsd_max: float) -> float:
        return gsd_max * self.focal_length * self.pixel_cols / self.sensor_width

    def footprint_mm(self, distance_mm: float) -> tuple[float, float]:
        return (distance_mm * self.sensor_width / self.focal_length, distance_mm * self.sensor_height / self.focal_length)


@dataclass(frozen=True)
class AStarWeights:
    a1: float = 1.0
    a2: float = 1.0
    a3: float = 1.0

    def __post_init__(self):
        w = (self.a1, self.a2, self.a3)
        if min(w) < 0 or max(w) <= 0:
            raise InvalidParameter("A* weights must be nonnegative with at least one positive")


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    z: float
    yaw: float
    kind: str = INTERMEDIATE

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class FlightPath:
    waypoints: list[Waypoint] = field(default_factory=list)
    total_cost: float = 0.0

    def shooting(self) -> list[Waypoint]:
        return [w for w in self.waypoints if w.kind == SHOOTING]


@dataclass(frozen=True)
class ShootingPose:
    position: np.ndarray
    yaw: float
    uv: tuple[float, float]  # footprint centre in patch frame
    footprint: tuple[float, float]  # metres along the frame axes
    row: int
    col: int


def build_voxel_grid(obstacles, bounds, resolution: float, inflation: int = 1) -> VoxelGrid:
    """Occupancy grid over ``bounds = (lo, hi)``; obstacles are inflated by Chebyshev voxels."""
    if not resolution > 0:
        raise InvalidParameter("resolution must be positive")
    if inflation < 0:
        raise InvalidParameter("inflation must be >= 0")
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if np.any(hi <= lo):
        raise InvalidParameter("bounds must have positive extent")
    dims = np.maximum(np.ceil((hi - lo) / resolution - 1e-9).astype(int), 1)
    occ = np.zeros(tuple(dims), dtype=bool)
    pts = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    if len(pts):
        outside = np.any((pts < lo) | (pts > hi), axis=1)
        if outside.any():
            raise OutOfBounds(f"{int(outside.sum())} obstacle points outside grid bounds, e.g. {pts[outside][0]}")
        idx = np.minimum(np.floor((pts - lo) / resolution).astype(int), dims - 1)
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        if inflation:
            occ = binary_dilation(occ, structure=np.ones((2 * inflation + 1,) * 3, dtype=bool))
    occ.setflags(write=False)
    return VoxelGrid(lo, float(resolution), occ)


def _axis_positions(lo: float, hi: float, footprint: float, overlap: float) -> list[float]:
    length = hi - lo
    if length <= footprint + 1e-9:
        return [0.5 * (lo + hi)]
    spacing = footprint * (1.0 - overlap)
    n = int(math.ceil((length - footprint) / spacing - 1e-9)) + 1
    step = (length - footprint) / (n - 1)
    return [lo + 0.5 * footprint + i * step for i in range(n)]


def tiling_count(length: float, footprint: float, overlap: float) -> int:
    return len(_axis_positions(0.0, length, footprint, overlap))


def generate_shooting_points(
    patch: SurfacePatch,
    cam: CameraModel,
    gsd_max: float = 0.5,
    overlap: float = 0.3,
    facing=None,
) -> list[ShootingPose]:
    """Boustrophedon grid of camera poses covering the patch at ``gsd_max`` mm/px.

    Poses sit at the standoff distance along the patch normal, on the side of
    ``facing`` when given. Rows follow the patch's first frame axis.
    """
    if not 0 <= overlap < 1:
        raise InvalidParameter("overlap must be in [0, 1)")
    if not gsd_max > 0:
        raise InvalidParameter("gsd_max must be positive")
    if abs(patch.area()) <= 1e-12:
        raise DegenerateGeometry("patch has zero area")
    d_mm = cam.standoff_mm(gsd_max)
    fw, fh = (v / 1000.0 for v in cam.footprint_mm(d_mm))
    d = d_mm / 1000.0

    normal = patch.plane.normal.copy()
    if facing is not None:
        centroid = patch.to_world(patch.boundary.mean(0))
        if (np.asarray(facing, dtype=float) - centroid) @ normal < 0:
            normal = -normal
    yaw = math.atan2(-normal[1], -normal[0])

    umin, vmin = patch.boundary.min(0)
    umax, vmax = patch.boundary.max(0)
    us = _axis_positions(umin, umax, fw, overlap)
    vs = _axis_positions(vmin, vmax, fh, overlap)
    poses = []
    for r, v in enumerate(vs):
        cols = range(len(us)) if r % 2 == 0 else range(len(us) - 1, -1, -1)
        for c in cols:
            u = us[c]
            pos = patch.to_world(np.array([u, v])) + d * normal
            poses.append(ShootingPose(pos, yaw, (u, v), (fw, fh), r, c))
    return poses


def step_cost(k: int, l: int, m: int, w: AStarWeights) -> float:
    if (k, l, m) == (0, 0, 0):
        raise InvalidMove("null move")
    if not all(v in (-1, 0, 1) for v in (k, l, m)):
        raise InvalidMove(f"move {(k, l, m)} is not to a 26-neighbour")
    return w.a1 * k * k + w.a2 * l * l + w.a3 * m * m


def astar(grid: VoxelGrid, start, goal, w: AStarWeights = AStarWeights()) -> tuple[list[tuple[int, int, int]], float]:
    """Minimum-cost 26-connected voxel path from ``start`` to ``goal``.

    The path includes both endpoints, except that ``start == goal`` yields an
    empty path of cost 0.

    Heuristic ``min(a) * chebyshev`` is admissible and consistent. Ties on f
    go to smaller h, then to the lexicographically smaller voxel.
    """
    start, goal = tuple(int(v) for v in start), tuple(int(v) for v in goal)
    for name, v in (("start", start), ("goal", goal)):
        if not grid.in_grid(v):
            raise InvalidEndpoint(f"{name} {v} outside grid")
        if grid.occupancy[v]:
            raise InvalidEndpoint(f"{name} {v} is occupied")
    if start == goal:
        return [], 0.0

    nx, ny, nz = grid.dims
    occ = grid.occupancy
    hmin = min(w.a1, w.a2, w.a3)
    costs = [step_cost(*m, w) for m in MOVES]
    gx, gy, gz = goal

    def h(v):
        return hmin * max(abs(v[0] - gx), abs(v[1] - gy), abs(v[2] - gz))

    g = {start: 0.0}
    parent = {start: None}
    closed = set()
    h0 = h(start)
    heap = [(h0, h0, start)]
    while heap:
        f, hv, v = heapq.heappop(heap)
        if v in closed:
            continue
        if v == goal:
            break
        closed.add(v)
        gv = g[v]
        x, y, z = v
        for (dx, dy, dz), c in zip(MOVES, costs):
            nxv, nyv, nzv = x + dx, y + dy, z + dz
            if not (0 <= nxv < nx and 0 <= nyv < ny and 0 <= nzv < nz):
                continue
            nb = (nxv, nyv, nzv)
            if occ[nb] or nb in closed:
                continue
            ng = gv + c
            if ng < g.get(nb, math.inf):
                g[nb] = ng
                parent[nb] = v
                hn = h(nb)
                heapq.heappush(heap, (ng + hn, hn, nb))
    else:
        raise Unreachable(f"no path from {start} to {goal}")

    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()
    return path, g[goal]


def path_cost(path, w: AStarWeights) -> float:
    return sum(step_cost(*(np.subtract(b, a)), w) for a, b in zip(path, path[1:]))


def rasterize_patch(patch: SurfacePatch, spacing: float) -> np.ndarray:
    """World points sampled over the patch polygon at ``spacing``."""
    from .pointcloud import point_in_convex_polygon

    lo, hi = patch.boundary.min(0), patch.boundary.max(0)
    us = np.arange(lo[0], hi[0] + spacing, spacing)
    vs = np.arange(lo[1], hi[1] + spacing, spacing)
    uu, vv = np.meshgrid(np.minimum(us, hi[0]), np.minimum(vs, hi[1]))
    uv = np.column_stack([uu.ravel(), vv.ravel()])
    uv = np.vstack([uv[point_in_convex_polygon(patch.boundary, uv)], patch.boundary])
    return patch.to_world(uv)


@dataclass(frozen=True)
class GridParams:
    resolution: float = 0.5
    inflation: int = 1
    margin: float = 2.0
    include_surfaces: bool = True


def plan_mission(
    patches: list[SurfacePatch],
    obstacles: np.ndarray,
    cam: CameraModel = CameraModel(),
    grid: GridParams = GridParams(),
    w: AStarWeights = AStarWeights(),
    gsd_max: float = 0.5,
    overlap: float = 0.3,
    facing=None,
) -> tuple[FlightPath, VoxelGrid]:
    """Shooting waypoints for every patch joined by A* corridors."""
    if not patches:
        raise InvalidParameter("plan_mission needs at least one patch")
    poses = [p for patch in patches for p in generate_shooting_points(patch, cam, gsd_max, overlap, facing)]
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    occupied = [obstacles]
    if grid.include_surfaces:
        occupied += [rasterize_patch(p, grid.resolution / 2) for p in patches]
    occ_pts = np.vstack(occupied)
    every = np.vstack([occ_pts] + [p.position[None] for p in poses])
    bounds = (every.min(0) - grid.margin, every.max(0) + grid.margin)
    vgrid = build_voxel_grid(occ_pts, bounds, grid.resolution, grid.inflation)

    cells = []
    for i, pose in enumerate(poses):
        cell = vgrid.voxel_of(pose.position)
        if vgrid.occupancy[cell]:
            raise Unreachable(f"shooting pose {i} at {np.round(pose.position, 3).tolist()} lies in an occupied voxel")
        cells.append(cell)

    wps = [Waypoint(*map(float, poses[0].position), poses[0].yaw, SHOOTING)]
    total = 0.0
    for i in range(1, len(poses)):
        try:
            vpath, cost = astar(vgrid, cells[i - 1], cells[i], w)
        except Unreachable:
            raise Unreachable(
                f"shooting pose {i} at {np.round(poses[i].position, 3).tolist()} unreachable from pose {i - 1}"
            ) from None
        total += cost
        for v in vpath[1:-1]:
            c = vgrid.center_of(v)
            wps.append(Waypoint(float(c[0]), float(c[1]), float(c[2]), poses[i].yaw, INTERMEDIATE))
        wps.append(Waypoint(*map(float, poses[i].position), poses[i].yaw, SHOOTING))
    return FlightPath(wps, total), vgrid


def perturb_waypoints(path: FlightPath, sigma: float = 0.5, clip: float = 1.5, seed: int = 0) -> FlightPath:
    """Simulated GPS error: isotropic Gaussian offsets, norm clipped at ``clip`` metres."""
    rng = np.random.default_rng(seed)
    out = []
    for wp in path.waypoints:
        off = rng.normal(0.0, sigma, 3)
        n = np.linalg.norm(off)
        if n > clip:
            off *= clip / n
        out.append(Waypoint(wp.x + off[0], wp.y + off[1], wp.z + off[2], wp.yaw, wp.kind))
    return FlightPath(out, path.total_cost)


def waypoints_to_json(path: FlightPath) -> list[dict]:
    return [{"x": w.x, "y": w.y, "z": w.z, "yaw": w.yaw, "kind": w.kind} for w in path.waypoints]


def export_waypoints(path: FlightPath, file: str | Path) -> None:
    try:
        Path(file).write_text(json.dumps(waypoints_to_json(path)))
    except OSError as exc:
        raise IoError(f"cannot write waypoints to {file}: {exc}") from exc


def import_waypoints(file: str | Path) -> FlightPath:
    try:
        doc = json.loads(Path(file).read_text())
    except OSError as exc:
        raise IoError(f"cannot read waypoints from {file}: {exc}") from exc
    wps = [Waypoint(float(d["x"]), float(d["y"]), float(d["z"]), float(d["yaw"]), d["kind"]) for d in doc]
    return FlightPath(wps)
