"""Pipeline configuration: one JSON document with a block per stage."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .crack import BRIGHT, DARK, DetectParams, SauvolaParams
from .errors import ConfigError, IoError
from .mission import AStarWeights, CameraModel, GridParams
from .stitch import SiftParams, StitchParams

STAGES = ("pointcloud", "mission", "stitch", "histoseg", "crack")


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class PointcloudConfig:
    overlap_tau: float = 0.05  # m, correspondence radius for scan overlap
    icp_max_iter: int = 50
    icp_tol: float = 1e-9
    outlier_k: int = 8
    outlier_alpha: float = 1.0
    voxel_leaf: float = 0.0  # 0 disables downsampling
    ransac_iters: int = 500
    plane_dist_tol: float = 0.02
    min_inliers: int = 100
    max_planes: int = 5
    cluster_epsilon: float = 0.3

    def validate(self):
        _need(self.overlap_tau > 0, "pointcloud.overlap_tau must be > 0")
        _need(self.icp_max_iter >= 1, "pointcloud.icp_max_iter must be >= 1")
        _need(self.icp_tol >= 0, "pointcloud.icp_tol must be >= 0")
        _need(self.outlier_k >= 1, "pointcloud.outlier_k must be >= 1")
        _need(self.outlier_alpha >= 0, "pointcloud.outlier_alpha must be >= 0")
        _need(self.voxel_leaf >= 0, "pointcloud.voxel_leaf must be >= 0")
        _need(self.ransac_iters >= 1, "pointcloud.ransac_iters must be >= 1")
        _need(self.plane_dist_tol > 0, "pointcloud.plane_dist_tol must be > 0")
        _need(self.min_inliers >= 3, "pointcloud.min_inliers must be >= 3")
        _need(self.max_planes >= 1, "pointcloud.max_planes must be >= 1")
        _need(self.cluster_epsilon > 0, "pointcloud.cluster_epsilon must be > 0")


@dataclass
class MissionConfig:
    gsd_max: float = 0.5  # mm per pixel
    overlap: float = 0.3
    resolution: float = 0.5  # voxel edge, m
    inflation: int = 1
    margin: float = 2.0
    include_surfaces: bool = True
    a1: float = 1.0
    a2: float = 1.0
    a3: float = 1.0
    focal_length: float = 34.4
    sensor_width: float = 6.17
    sensor_height: float = 4.63
    pixel_cols: int = 4000
    pixel_rows: int = 3000
    gps_sigma: float = 0.0  # 0 disables simulated GPS error
    gps_clip: float = 1.5

    def validate(self):
        _need(self.gsd_max > 0, "mission.gsd_max must be > 0")
        _need(0 <= self.overlap < 1, "mission.overlap must lie in [0, 1)")
        _need(self.resolution > 0, "mission.resolution must be > 0")
        _need(self.inflation >= 0, "mission.inflation must be >= 0")
        _need(self.margin >= 0, "mission.margin must be >= 0")
        _need(min(self.a1, self.a2, self.a3) > 0, "mission weights a1, a2, a3 must be > 0")
        _need(min(self.focal_length, self.sensor_width, self.sensor_height) > 0, "camera dimensions must be > 0")
        _need(min(self.pixel_cols, self.pixel_rows) >= 1, "camera pixel counts must be >= 1")
        _need(self.gps_sigma >= 0 and self.gps_clip >= 0, "mission.gps_sigma and gps_clip must be >= 0")

    def camera(self) -> CameraModel:
        return CameraModel(self.focal_length, self.sensor_width, self.sensor_height, self.pixel_cols, self.pixel_rows)

    def grid(self) -> GridParams:
        return GridParams(self.resolution, self.inflation, self.margin, self.include_surfaces)

    def weights(self) -> AStarWeights:
        return AStarWeights(self.a1, self.a2, self.a3)


@dataclass
class StitchConfig:
    ratio: float = 0.8
    ransac_iters: int = 2000
    inlier_tol: float = 2.0  # px, symmetric transfer error
    verify_alpha: float = 8.0
    verify_beta: float = 0.3
    blank_fill: int = 0
    sift_sigma: float = 1.6
    sift_scales: int = 3
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    upsample: bool = False

    def validate(self):
        _need(0 < self.ratio <= 1, "stitch.ratio must lie in (0, 1]")
        _need(self.ransac_iters >= 1, "stitch.ransac_iters must be >= 1")
        _need(self.inlier_tol > 0, "stitch.inlier_tol must be > 0")
        _need(self.verify_alpha >= 0 and self.verify_beta >= 0, "stitch.verify_alpha/beta must be >= 0")
        _need(0 <= self.blank_fill <= 255, "stitch.blank_fill must lie in [0, 255]")
        _need(self.sift_sigma > 0, "stitch.sift_sigma must be > 0")
        _need(self.sift_scales >= 1, "stitch.sift_scales must be >= 1")
        _need(self.contrast_threshold >= 0, "stitch.contrast_threshold must be >= 0")
        _need(self.edge_ratio > 1, "stitch.edge_ratio must be > 1")

    def params(self) -> StitchParams:
        sift = SiftParams(
            sigma=self.sift_sigma,
            scales_per_octave=self.sift_scales,
            contrast_threshold=self.contrast_threshold,
            edge_ratio=self.edge_ratio,
            upsample=self.upsample,
        )
        return StitchParams(self.ratio, self.ransac_iters, self.inlier_tol, self.verify_alpha, self.verify_beta, self.blank_fill, sift)


@dataclass
class HistosegConfig:
    smooth_w: int = 5
    min_prominence: float = 0.05
    min_sep: int = 10
    beta: int = 255

    def validate(self):
        _need(self.smooth_w >= 1 and self.smooth_w % 2 == 1, "histoseg.smooth_w must be a positive odd integer")
        _need(0 <= self.min_prominence <= 1, "histoseg.min_prominence must lie in [0, 1]")
        _need(self.min_sep >= 1, "histoseg.min_sep must be >= 1")
        _need(0 <= self.beta <= 255, "histoseg.beta must lie in [0, 255]")


@dataclass
class CrackConfig:
    window: int = 31
    k: float = 0.5
    R: float = 128.0
    polarity: str = DARK
    min_area: int = 30
    min_elongation: float = 3.0
    median: int = 0

    def validate(self):
        _need(self.window >= 3 and self.window % 2 == 1, "crack.window must be odd and >= 3")
        _need(0 <= self.k <= 1, "crack.k must lie in [0, 1]")
        _need(self.R > 0, "crack.R must be > 0")
        _need(self.polarity in (DARK, BRIGHT), f"crack.polarity must be {DARK!r} or {BRIGHT!r}")
        _need(self.min_area >= 1, "crack.min_area must be >= 1")
        _need(self.min_elongation >= 1, "crack.min_elongation must be >= 1")
        _need(self.median >= 0, "crack.median must be >= 0")

    def params(self) -> DetectParams:
        return DetectParams(SauvolaParams(self.window, self.k, self.R, self.polarity), self.min_area, self.min_elongation, self.median)


BLOCKS = {
    "pointcloud": PointcloudConfig,
    "mission": MissionConfig,
    "stitch": StitchConfig,
    "histoseg": HistosegConfig,
    "crack": CrackConfig,
}
TOP_LEVEL = ("input", "cloud", "output", "seed")


@dataclass
class PipelineConfig:
    pointcloud: PointcloudConfig = field(default_factory=PointcloudConfig)
    mission: MissionConfig = field(default_factory=MissionConfig)
    stitch: StitchConfig = field(default_factory=StitchConfig)
    histoseg: HistosegConfig = field(default_factory=HistosegConfig)
    crack: CrackConfig = field(default_factory=CrackConfig)
    input: str = ""  # image directory, or a single pre-stitched image
    cloud: str = ""  # optional .xyz cloud; enables the plan stages
    output: str = "out"
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        for name in BLOCKS:
            getattr(self, name).validate()
        _need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        return self

    def stage_seed(self, stage: str) -> int:
        """Independent per-stage seed forked from the top-level one."""
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}")
        child = np.random.SeedSequence(self.seed).spawn(len(STAGES))[STAGES.index(stage)]
        return int(child.generate_state(1)[0])

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(BLOCKS) - set(TOP_LEVEL)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, block_cls in BLOCKS.items():
            kw[name] = _block_from_dict(name, block_cls, doc.get(name, {}))
        for key in TOP_LEVEL:
            if key in doc:
                want = int if key == "seed" else str
                kw[key] = _coerce(key, doc[key], want)
        return cls(**kw).validate()

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text)


def _coerce(key: str, value, want: type):
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def _block_from_dict(name: str, block_cls, doc) -> object:
    if not isinstance(doc, dict):
        raise ConfigError(f"{name} block must be a JSON object")
    known = {f.name: f for f in fields(block_cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    types = {"int": int, "float": float, "bool": bool, "str": str}
    kw = {k: _coerce(f"{name}.{k}", v, types[known[k].type]) for k, v in doc.items()}
    return block_cls(**kw)


def config_keys() -> list[tuple[str, str, type]]:
    """Every leaf key as (block or '', field, type), in declaration order."""
    types = {"int": int, "float": float, "bool": bool, "str": str}
    out = []
    for name, block_cls in BLOCKS.items():
        out += [(name, f.name, types[f.type]) for f in fields(block_cls)]
    out += [("", key, int if key == "seed" else str) for key in TOP_LEVEL]
    return out


def set_key(cfg: PipelineConfig, block: str, key: str, value) -> None:
    target = getattr(cfg, block) if block else cfg
    setattr(target, key, value)
