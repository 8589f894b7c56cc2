"""Plan a coverage flight over the synthetic wall's point cloud.

Extracts planes, lays shooting points for the target wall at the requested
ground sample distance, joins them with A*, and reports how far simulated
GPS error moves the shooting positions.

    python scripts/plan_wall_mission.py --gsd 0.5 --overlap 0.3 --gps-sigma 0.5
"""
import argparse

import numpy as np

from uavcrack.config import PipelineConfig
from uavcrack.mission import generate_shooting_points, perturb_waypoints, plan_mission
from uavcrack.pointcloud import euclidean_cluster, extract_surfaces, remove_outliers
from uavcrack.synthwall import SynthWallSpec, synth_wall


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gsd", type=float, default=0.5, help="mm per pixel")
    ap.add_argument("--overlap", type=float, default=0.3)
    ap.add_argument("--resolution", type=float, default=0.5, help="voxel edge, m")
    ap.add_argument("--gps-sigma", type=float, default=0.5)
    args = ap.parse_args()

    cfg = PipelineConfig(seed=args.seed)
    mc = cfg.mission
    mc.gsd_max, mc.overlap, mc.resolution = args.gsd, args.overlap, args.resolution
    sw = synth_wall(SynthWallSpec(seed=args.seed))
    cloud = remove_outliers(sw.cloud, 8, 1.0)
    patches, residual = extract_surfaces(cloud, seed=cfg.stage_seed("pointcloud"))
    clusters = euclidean_cluster(residual, cfg.pointcloud.cluster_epsilon)
    print(f"{len(cloud)} points, {len(patches)} planes, {len(clusters.clusters)} residual clusters")
    for i, p in enumerate(patches):
        print(f"  plane {i}: normal {np.round(p.plane.normal, 3).tolist()}, area {p.area():.2f} m^2, "
              f"{len(p.plane.inlier_indices)} inliers")

    target = patches[:1]
    cam = mc.camera()
    d = cam.standoff_mm(args.gsd) / 1000
    poses = generate_shooting_points(target[0], cam, args.gsd, args.overlap, cloud.scan_origin)
    print(f"standoff {d:.2f} m, footprint {poses[0].footprint[0]:.2f} x {poses[0].footprint[1]:.2f} m, {len(poses)} poses")

    obstacles = np.vstack([residual.points] + [cloud.points[p.plane.inlier_indices] for p in patches[1:]])
    path, grid = plan_mission(target, obstacles, cam, mc.grid(), mc.weights(), args.gsd, args.overlap, cloud.scan_origin)
    print(f"grid {grid.dims}, {int(grid.occupancy.sum())} occupied voxels")
    print(f"path: {len(path.waypoints)} waypoints ({len(path.shooting())} shooting), cost {path.total_cost:.1f}")

    noisy = perturb_waypoints(path, args.gps_sigma, 1.5, seed=cfg.stage_seed("mission"))
    off = np.array([np.linalg.norm(a.position - b.position) for a, b in zip(path.waypoints, noisy.waypoints)])
    print(f"GPS sigma {args.gps_sigma} m: mean offset {off.mean():.2f} m, max {off.max():.2f} m")


if __name__ == "__main__":
    main()
