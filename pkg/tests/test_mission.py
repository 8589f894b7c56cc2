import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import dijkstra_cost
from uavcrack.errors import DegenerateGeometry, InvalidEndpoint, InvalidMove, OutOfBounds, Unreachable
from uavcrack.mission import (
    INTERMEDIATE,
    MOVES,
    SHOOTING,
    AStarWeights,
    CameraModel,
    FlightPath,
    GridParams,
    VoxelGrid,
    Waypoint,
    astar,
    build_voxel_grid,
    export_waypoints,
    generate_shooting_points,
    import_waypoints,
    path_cost,
    perturb_waypoints,
    plan_mission,
    step_cost,
    tiling_count,
)
from uavcrack.pointcloud import PlaneModel, make_patch

CAM = CameraModel(34.4, 6.17, 4.63, 4000, 3000)


def wall_patch(width, height, y=0.0):
    """Vertical rectangle in the plane y = const, x in [0, width], z in [0, height]."""
    corners = np.array([[0, y, 0], [width, y, 0], [width, y, height], [0, y, height]], dtype=float)
    plane = PlaneModel(np.array([0.0, 1.0, 0.0, -y]), np.arange(4))
    return make_patch(corners, plane)


def free_grid(shape, occ=None):
    o = np.zeros(shape, bool) if occ is None else occ
    return VoxelGrid(np.zeros(3), 1.0, o)


# ---------- grid ----------

def test_grid_examples():
    bounds = (np.zeros(3), np.full(3, 5.0))
    assert not build_voxel_grid(np.zeros((0, 3)), bounds, 1.0).occupancy.any()
    g0 = build_voxel_grid([[2.5, 2.5, 2.5]], bounds, 1.0, inflation=0)
    assert g0.occupancy.sum() == 1 and g0.occupancy[2, 2, 2]
    g1 = build_voxel_grid([[2.5, 2.5, 2.5]], bounds, 1.0, inflation=1)
    assert g1.occupancy.sum() == 27
    assert g1.dims == (5, 5, 5)


def test_grid_out_of_bounds():
    with pytest.raises(OutOfBounds):
        build_voxel_grid([[6.0, 0, 0]], (np.zeros(3), np.full(3, 5.0)), 1.0)


@given(st.integers(0, 10_000), st.integers(0, 2))
def test_grid_inflation_is_chebyshev_ball(seed, infl):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 8, (int(rng.integers(1, 6)), 3))
    g = build_voxel_grid(pts, (np.zeros(3), np.full(3, 8.0)), 1.0, infl)
    vox = np.floor(pts).astype(int)
    idx = np.stack(np.meshgrid(*[np.arange(8)] * 3, indexing="ij"), -1)
    cheb = np.abs(idx[:, :, :, None, :] - vox[None, None, None]).max(-1).min(-1)
    np.testing.assert_array_equal(g.occupancy, cheb <= infl)


# ---------- camera / shooting points ----------

def test_standoff_and_footprint():
    d = CAM.standoff_mm(0.5)
    assert d == pytest.approx(0.5 * 34.4 * 4000 / 6.17)
    w, h = CAM.footprint_mm(d)
    assert w == pytest.approx(0.5 * 4000)  # gsd * cols
    assert h == pytest.approx(0.5 * 4000 * 4.63 / 6.17)


def test_one_footprint_one_pose():
    w, h = (v / 1000 for v in CAM.footprint_mm(CAM.standoff_mm(0.5)))
    assert len(generate_shooting_points(wall_patch(w, h), CAM, 0.5, 0.0)) == 1


def test_two_footprints_two_poses():
    w, h = (v / 1000 for v in CAM.footprint_mm(CAM.standoff_mm(0.5)))
    assert len(generate_shooting_points(wall_patch(2 * w, h), CAM, 0.5, 0.0)) == 2


def tiles_needed(length, fp, ov):
    # n frames of width fp advancing by fp(1-ov) cover n*fp - (n-1)*fp*ov
    n = 1
    while n * fp - (n - 1) * fp * ov < length - 1e-12:
        n += 1
    return n


def test_wall_pose_count_matches_tiling_oracle():
    fw = 0.5 * 4000 / 1000.0
    fh = 0.5 * 4000 * 4.63 / 6.17 / 1000.0
    poses = generate_shooting_points(wall_patch(1.8, 2.7), CAM, 0.5, 0.3)
    want = tiles_needed(1.8, fw, 0.3) * tiles_needed(2.7, fh, 0.3)
    assert len(poses) == want == 3


@given(st.floats(0.5, 12), st.floats(0.5, 12), st.floats(0, 0.8))
def test_tiling_count_oracle(length, fp, ov):
    assert tiling_count(length, fp, ov) == tiles_needed(length, fp, ov)


@given(st.floats(1.0, 9.0), st.floats(1.0, 9.0), st.floats(0.0, 0.6))
def test_footprints_cover_patch(width, height, ov):
    patch = wall_patch(width, height)
    poses = generate_shooting_points(patch, CAM, 0.5, ov)
    lo, hi = patch.boundary.min(0), patch.boundary.max(0)
    uu, vv = np.meshgrid(np.arange(lo[0], hi[0] + 1e-9, 0.01), np.arange(lo[1], hi[1] + 1e-9, 0.01))
    covered = np.zeros(uu.shape, bool)
    for p in poses:
        (cu, cv), (fw, fh) = p.uv, p.footprint
        covered |= (np.abs(uu - cu) <= fw / 2 + 1e-9) & (np.abs(vv - cv) <= fh / 2 + 1e-9)
    assert covered.all()


def test_poses_face_surface_at_standoff():
    patch = wall_patch(6.0, 4.0)
    d = CAM.standoff_mm(0.5) / 1000
    poses = generate_shooting_points(patch, CAM, 0.5, 0.3, facing=[3, -20, 2])
    for p in poses:
        assert p.position[1] == pytest.approx(-d)
        view = np.array([math.cos(p.yaw), math.sin(p.yaw), 0.0])
        assert view @ np.array([0, 1.0, 0]) == pytest.approx(1.0)
    # boustrophedon: columns reverse on odd rows
    rows = {}
    for p in poses:
        rows.setdefault(p.row, []).append(p.col)
    for r, cols in rows.items():
        assert cols == sorted(cols, reverse=bool(r % 2))


def test_zero_area_patch():
    patch = wall_patch(2.0, 2.0)
    flat = type(patch)(patch.plane, np.zeros((3, 2)), patch.origin, patch.axes)
    with pytest.raises(DegenerateGeometry):
        generate_shooting_points(flat, CAM)


# ---------- step cost and A* ----------

@pytest.mark.parametrize(
    "move,a,want", [((1, 0, 0), (1, 1, 1), 1), ((1, 1, 1), (1, 2, 3), 6), ((0, -1, 1), (5, 2, 3), 5)]
)
def test_step_cost_examples(move, a, want):
    assert step_cost(*move, AStarWeights(*a)) == want


def test_step_cost_all_moves_closed_form():
    w = AStarWeights(0.7, 1.9, 2.3)
    assert len(MOVES) == 26
    for k, l, m in itertools.product((-1, 0, 1), repeat=3):
        if (k, l, m) == (0, 0, 0):
            with pytest.raises(InvalidMove):
                step_cost(k, l, m, w)
            continue
        assert step_cost(k, l, m, w) == 0.7 * k * k + 1.9 * l * l + 2.3 * m * m
        assert step_cost(-k, l, m, w) == step_cost(k, -l, m, w) == step_cost(k, l, -m, w) == step_cost(k, l, m, w)


def test_astar_trivial_cases():
    g = free_grid((5, 5, 5))
    assert astar(g, (1, 1, 1), (1, 1, 1)) == ([], 0.0)
    path, cost = astar(g, (0, 0, 0), (4, 4, 4))
    assert cost == 12 and len(path) == 5


def test_astar_endpoint_errors():
    occ = np.zeros((3, 3, 3), bool)
    occ[1, 1, 1] = True
    g = free_grid((3, 3, 3), occ)
    with pytest.raises(InvalidEndpoint):
        astar(g, (1, 1, 1), (0, 0, 0))
    with pytest.raises(InvalidEndpoint):
        astar(g, (0, 0, 0), (5, 0, 0))


def test_astar_unreachable():
    occ = np.zeros((5, 5, 5), bool)
    occ[2] = True
    with pytest.raises(Unreachable):
        astar(free_grid((5, 5, 5), occ), (0, 0, 0), (4, 4, 4))


def random_instance(seed, n=20, occ=0.2):
    rng = np.random.default_rng(seed)
    grid = rng.random((n, n, n)) < occ
    free = np.argwhere(~grid)
    s, g = (tuple(int(v) for v in free[i]) for i in rng.choice(len(free), 2, replace=False))
    w = tuple(float(v) for v in rng.uniform(0.5, 3, 3))
    return grid, s, g, w


@pytest.mark.parametrize("seed", range(15))
def test_astar_equals_dijkstra(seed):
    occ, s, g, w = random_instance(seed)
    want = dijkstra_cost(~occ, s, g, w)
    grid = free_grid(occ.shape, occ)
    if want is None:
        with pytest.raises(Unreachable):
            astar(grid, s, g, AStarWeights(*w))
        return
    path, cost = astar(grid, s, g, AStarWeights(*w))
    assert cost == pytest.approx(want, abs=1e-9)
    assert path[0] == s and path[-1] == g
    assert all(not occ[v] for v in path)
    assert all(max(abs(a - b) for a, b in zip(p, q)) == 1 for p, q in zip(path, path[1:]))
    assert path_cost(path, AStarWeights(*w)) == pytest.approx(cost)


@given(st.integers(0, 10_000), st.permutations([0, 1, 2]))
def test_astar_axis_permutation_invariance(seed, perm):
    occ, s, g, _ = random_instance(seed, n=8)
    grid = free_grid(occ.shape, occ)
    try:
        _, c0 = astar(grid, s, g)
    except Unreachable:
        return
    occ_p = np.transpose(occ, perm)
    _, c1 = astar(free_grid(occ_p.shape, occ_p), tuple(s[i] for i in perm), tuple(g[i] for i in perm))
    assert c0 == c1


# ---------- planning ----------

def test_plan_single_pose():
    w, h = (v / 1000 for v in CAM.footprint_mm(CAM.standoff_mm(0.5)))
    path, _ = plan_mission([wall_patch(w, h)], np.zeros((0, 3)), CAM, facing=[0, -20, 0])
    assert [wp.kind for wp in path.waypoints] == [SHOOTING]
    assert path.total_cost == 0


def test_plan_two_poses_straight_corridor():
    w, h = (v / 1000 for v in CAM.footprint_mm(CAM.standoff_mm(0.5)))
    patch = wall_patch(2 * w, h)
    params = GridParams(resolution=0.5, inflation=0, margin=1.0)
    path, grid = plan_mission([patch], np.zeros((0, 3)), CAM, params, overlap=0.0, facing=[0, -20, 0])
    shots = path.shooting()
    assert len(shots) == 2
    a, b = grid.voxel_of(shots[0].position), grid.voxel_of(shots[1].position)
    want = dijkstra_cost(~grid.occupancy, a, b, (1.0, 1.0, 1.0))
    assert path.total_cost == want
    # corridor along x: one voxel step per unit cost
    assert want == abs(a[0] - b[0])


def test_plan_avoids_obstacle_cluster():
    patch = wall_patch(8.0, 1.5)  # overlap 0: poses at x = 1, 3, 5, 7
    d = CAM.standoff_mm(0.5) / 1000
    # a post on the flight line between the second and third pose
    post = np.array([[4.0 + dx, -d + dy, z] for dx in (-0.2, 0, 0.2) for dy in (-0.2, 0, 0.2) for z in np.arange(-2, 2.5, 0.1)])
    params = GridParams(resolution=0.25, inflation=1, margin=2.0)
    path, grid = plan_mission([patch], post, CAM, params, overlap=0.0, facing=[0, -20, 0])
    assert len(path.shooting()) == 4
    assert any(wp.kind == INTERMEDIATE for wp in path.waypoints)
    cells = [grid.voxel_of(wp.position) for wp in path.waypoints]
    assert all(not grid.occupancy[c] for c in cells)
    assert all(max(abs(p - q) for p, q in zip(a, b)) <= 1 for a, b in zip(cells, cells[1:]))
    # the detour costs more than the straight corridor would
    straight = abs(cells[0][0] - cells[-1][0])
    assert path.total_cost > straight


def test_plan_needs_patch():
    with pytest.raises(Exception):
        plan_mission([], np.zeros((0, 3)))


# ---------- waypoint I/O ----------

def test_export_empty_and_single(tmp_path):
    export_waypoints(FlightPath([]), tmp_path / "e.json")
    assert (tmp_path / "e.json").read_text() == "[]"
    export_waypoints(FlightPath([Waypoint(1, 2, 3, 0.5, SHOOTING)]), tmp_path / "one.json")
    doc = json.loads((tmp_path / "one.json").read_text())
    assert len(doc) == 1 and set(doc[0]) == {"x", "y", "z", "yaw", "kind"}


def test_waypoint_roundtrip(tmp_path, rng):
    wps = [Waypoint(*rng.normal(size=4), SHOOTING if i % 3 == 0 else INTERMEDIATE) for i in range(50)]
    wps = [Waypoint(float(w.x), float(w.y), float(w.z), float(w.yaw), w.kind) for w in wps]
    export_waypoints(FlightPath(wps, 3.0), tmp_path / "w.json")
    assert import_waypoints(tmp_path / "w.json").waypoints == wps


def test_perturb_clipped_and_seeded():
    path = FlightPath([Waypoint(0, 0, 0, 0, SHOOTING)] * 200)
    a = perturb_waypoints(path, sigma=2.0, clip=1.5, seed=3)
    b = perturb_waypoints(path, sigma=2.0, clip=1.5, seed=3)
    assert a == b
    assert max(np.linalg.norm(w.position) for w in a.waypoints) <= 1.5 + 1e-12
