"""Flowchart orchestration: [pointcloud -> mission] -> stitch -> pattern removal -> crack detection."""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from . import crack, histoseg, mission, pointcloud
from .config import PipelineConfig
from .errors import InspectionError, IoError, StageError
from .imaging import read_image, write_png
from .stitch import stitch_images
from .stitch.mosaic import homographies_json

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


class _Stage:
    """Context manager that times a stage and tags any failure with its name."""

    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s: start", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        dt = time.perf_counter() - self.t0
        self.timings[self.name] = dt
        if exc is None:
            log.info("stage %s: done in %.2f s", self.name, dt)
            return False
        if isinstance(exc, StageError):
            return False
        if isinstance(exc, (InspectionError, OSError, ValueError)):
            raise StageError(self.name, exc) from exc
        return False


def list_images(folder: str | Path) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise IoError(f"input directory {folder} does not exist")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise IoError(f"no images found in {folder}")
    return files


def _write_json(path: Path, doc) -> None:
    try:
        path.write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def plan_from_cloud(cfg: PipelineConfig, out: Path, timings: dict) -> dict:
    pc, mc = cfg.pointcloud, cfg.mission
    with _Stage("pointcloud", timings):
        cloud = pointcloud.load_xyz(cfg.cloud)
        cloud = pointcloud.remove_outliers(cloud, pc.outlier_k, pc.outlier_alpha)
        if pc.voxel_leaf > 0:
            cloud = pointcloud.voxel_downsample(cloud, pc.voxel_leaf)
        patches, residual = pointcloud.extract_surfaces(
            cloud, pc.min_inliers, pc.max_planes, pc.plane_dist_tol, pc.ransac_iters, seed=cfg.stage_seed("pointcloud")
        )
        clusters = pointcloud.euclidean_cluster(residual, pc.cluster_epsilon)
        pointcloud.save_surfaces_json(out / "surfaces.json", patches, clusters)
        log.info("%d surfaces, %d obstacle clusters", len(patches), len(clusters.clusters))
    with _Stage("mission", timings):
        # the first (largest) plane is the inspection target; the rest are obstacles
        target = patches[:1]
        obstacles = np.vstack([residual.points] + [cloud.points[p.plane.inlier_indices] for p in patches[1:]])
        facing = cloud.scan_origin
        path, _ = mission.plan_mission(target, obstacles, mc.camera(), mc.grid(), mc.weights(), mc.gsd_max, mc.overlap, facing)
        if mc.gps_sigma > 0:
            path = mission.perturb_waypoints(path, mc.gps_sigma, mc.gps_clip, seed=cfg.stage_seed("mission"))
        mission.export_waypoints(path, out / "waypoints.json")
        log.info("%d waypoints, total cost %.3f", len(path.waypoints), path.total_cost)
    return {"surfaces": str(out / "surfaces.json"), "waypoints": str(out / "waypoints.json")}


def _prepare(cfg: PipelineConfig) -> Path:
    cfg.validate()
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("setup", IoError(f"cannot create output directory {out}: {exc}")) from exc
    return out


def stitch_stage(cfg: PipelineConfig, out: Path, timings: dict) -> tuple[np.ndarray, dict]:
    with _Stage("stitch", timings):
        files = list_images(cfg.input)
        images = [read_image(f) for f in files]
        mos, matchsets = stitch_images(images, cfg.stitch.params(), seed=cfg.stage_seed("stitch"))
        write_png(out / "mosaic.png", mos.image)
        doc = homographies_json(mos, matchsets)
        doc["images"] = [f.name for f in files]
        _write_json(out / "homographies.json", doc)
    return mos.image, {"mosaic": str(out / "mosaic.png"), "homographies": str(out / "homographies.json")}


def detect_stage(cfg: PipelineConfig, image: np.ndarray, image_id: str, out: Path, timings: dict):
    """Pattern removal then crack detection; returns (report, artifacts)."""
    artifacts = {}
    hc = cfg.histoseg
    with _Stage("histoseg", timings):
        if image.ndim == 3:
            gray, diag = histoseg.segment(image, None, hc.beta, hc.smooth_w, hc.min_prominence, hc.min_sep)
            _write_json(out / "histogram.json", diag)
            artifacts["histogram"] = str(out / "histogram.json")
        else:
            # no red channel to separate patterns by; detect on the gray image as is
            gray = image
        write_png(out / "segmented.png", gray)
        artifacts["segmented"] = str(out / "segmented.png")

    with _Stage("crack", timings):
        report = crack.detect_cracks(gray, cfg.crack.params(), image_id)
        write_png(out / "mask.png", report.mask)
        try:
            (out / "report.json").write_text(report.dumps())
        except OSError as exc:
            raise IoError(f"cannot write report: {exc}") from exc
        artifacts["mask"] = str(out / "mask.png")
        artifacts["report"] = str(out / "report.json")
        log.info("%d crack components", len(report.components))
    return report, artifacts


def run_plan(cfg: PipelineConfig) -> dict:
    out = _prepare(cfg)
    timings: dict[str, float] = {}
    return {"artifacts": plan_from_cloud(cfg, out, timings), "timings": timings}


def run_stitch(cfg: PipelineConfig) -> dict:
    out = _prepare(cfg)
    timings: dict[str, float] = {}
    _, artifacts = stitch_stage(cfg, out, timings)
    return {"artifacts": artifacts, "timings": timings}


def run_detect(cfg: PipelineConfig) -> dict:
    out = _prepare(cfg)
    timings: dict[str, float] = {}
    with _Stage("load", timings):
        image = read_image(cfg.input)
    report, artifacts = detect_stage(cfg, image, Path(cfg.input).name, out, timings)
    return {"artifacts": artifacts, "timings": timings, "components": len(report.components)}


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every enabled stage and write its artifacts under ``cfg.output``.

    The plan stages run only when ``cfg.cloud`` is set. A directory input is
    stitched; a single image input is taken as an already stitched mosaic and
    the stitch stage is skipped. Returns artifact paths and stage timings.
    """
    out = _prepare(cfg)
    timings: dict[str, float] = {}
    artifacts: dict[str, str] = {}
    if cfg.cloud:
        artifacts.update(plan_from_cloud(cfg, out, timings))
    src = Path(cfg.input)
    if src.is_file():
        with _Stage("load", timings):
            image = read_image(src)
        image_id = src.name
    else:
        image, arts = stitch_stage(cfg, out, timings)
        artifacts.update(arts)
        image_id = "mosaic.png"
    report, arts = detect_stage(cfg, image, image_id, out, timings)
    artifacts.update(arts)
    total = sum(timings.values())
    log.info("timings: %s (total %.2f s)", ", ".join(f"{k}={v:.2f}s" for k, v in timings.items()), total)
    return {"artifacts": artifacts, "timings": timings, "components": len(report.components)}
