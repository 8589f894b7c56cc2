"""Locally adaptive (Sauvola) thresholding and line-like component filtering."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidParameter
from .imaging import build_integral, check_raster

DARK = "dark_foreground"
BRIGHT = "bright_foreground"


@dataclass(frozen=True)
class SauvolaParams:
    window: int = 31
    k: float = 0.5
    R: float = 128.0
    polarity: str = DARK

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise InvalidParameter("window must be odd and >= 3")
        if not self.R > 0:
            raise InvalidParameter("R must be positive")
        if not 0 <= self.k <= 1:
            raise InvalidParameter("k must lie in [0, 1]")
        if self.polarity not in (DARK, BRIGHT):
            raise InvalidParameter(f"polarity must be {DARK!r} or {BRIGHT!r}")


@dataclass(frozen=True)
class CrackComponent:
    ys: np.ndarray = field(repr=False)
    xs: np.ndarray = field(repr=False)
    bbox: tuple[int, int, int, int]  # x, y, w, h
    area: int
    centroid: tuple[float, float]  # x, y
    elongation: float
    orientation: float  # radians, principal axis in image coordinates

    def to_json(self) -> dict:
        return {
            "area_px": self.area,
            "bbox": list(self.bbox),
            "centroid": [round(self.centroid[0], 4), round(self.centroid[1], 4)],
            "elongation": round(self.elongation, 6),
            "orientation_rad": round(self.orientation, 6),
        }


@dataclass(frozen=True)
class CrackReport:
    image: str
    params: SauvolaParams
    components: list[CrackComponent]
    mask: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {
            "image": self.image,
            "params": {"N": self.params.window, "k": self.params.k, "R": self.params.R, "polarity": self.params.polarity},
            "components": [c.to_json() for c in self.components],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def _check_window(n: int) -> None:
    if n < 3 or n % 2 == 0:
        raise InvalidParameter(f"window must be odd and >= 3, got {n}")


def local_stats(img: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Window mean and (population) standard deviation at every pixel.

    Windows are clipped at the image border and divided by the number of
    pixels they actually cover. Sums come from int64 integral images, so the
    variance numerator is exact.
    """
    _check_window(window)
    img = check_raster(img, channels=1)
    ii = build_integral(img)
    h, w = img.shape
    r = window // 2
    y0 = np.clip(np.arange(h) - r, 0, h)[:, None]
    y1 = np.clip(np.arange(h) + r + 1, 0, h)[:, None]
    x0 = np.clip(np.arange(w) - r, 0, w)[None, :]
    x1 = np.clip(np.arange(w) + r + 1, 0, w)[None, :]
    count = (y1 - y0) * (x1 - x0)
    s = ii.window_sum(y0, x0, y1, x1)
    sq = ii.window_sq_sum(y0, x0, y1, x1)
    mean = s / count
    var = (count * sq - s * s) / (count.astype(np.float64) ** 2)
    return mean, np.sqrt(np.maximum(var, 0.0))


def sauvola_map(img: np.ndarray, p: SauvolaParams = SauvolaParams()) -> np.ndarray:
    m, s = local_stats(img, p.window)
    return sauvola_threshold(m, s, p.k, p.R)


def sauvola_threshold(m, s, k: float, R: float):
    return m * (1.0 + k * (s / R - 1.0))


def binarize_local(img: np.ndarray, p: SauvolaParams = SauvolaParams(), median: int = 0) -> np.ndarray:
    """Foreground mask against the per-pixel Sauvola threshold.

    ``median > 1`` applies a median pre-filter of that size (off by default).
    """
    img = check_raster(img, channels=1)
    if median and median > 1:
        img = ndimage.median_filter(img, size=median, mode="nearest")
    t = sauvola_map(img, p)
    vals = img.astype(np.float64)
    return vals < t if p.polarity == DARK else vals > t


def binarize_global(img: np.ndarray, t: float) -> np.ndarray:
    """Dark-foreground global threshold: foreground iff intensity < t."""
    if not 0 <= t <= 255:
        raise InvalidParameter("global threshold must lie in [0, 255]")
    img = check_raster(img, channels=1)
    return img.astype(np.float64) < t


EIGHT = np.ones((3, 3), dtype=bool)
FOUR = ndimage.generate_binary_structure(2, 1)


def describe_component(ys: np.ndarray, xs: np.ndarray) -> CrackComponent:
    area = len(ys)
    cx, cy = float(xs.mean()), float(ys.mean())
    dx, dy = xs - cx, ys - cy
    # second moments of the union of unit pixel squares
    cxx = float((dx * dx).mean()) + 1.0 / 12
    cyy = float((dy * dy).mean()) + 1.0 / 12
    cxy = float((dx * dy).mean())
    vals, vecs = np.linalg.eigh(np.array([[cxx, cxy], [cxy, cyy]]))
    elong = math.sqrt(vals[1] / vals[0])
    vx, vy = vecs[:, 1]
    theta = math.atan2(vy, vx)
    if theta <= -math.pi / 2:
        theta += math.pi
    elif theta > math.pi / 2:
        theta -= math.pi
    x0, y0 = int(xs.min()), int(ys.min())
    bbox = (x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)
    return CrackComponent(ys, xs, bbox, area, (cx, cy), elong, theta)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[CrackComponent]:
    """Maximal connected foreground regions in raster order of their first pixel."""
    if connectivity not in (4, 8):
        raise InvalidParameter("connectivity must be 4 or 8")
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT if connectivity == 8 else FOUR)
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    starts = np.cumsum(counts)
    comps = []
    w = mask.shape[1]
    for lab in range(1, n + 1):
        pix = order[starts[lab - 1] : starts[lab]]
        comps.append(describe_component(pix // w, pix % w))
    return comps


def filter_candidates(components: list[CrackComponent], min_area: int = 30, min_elongation: float = 3.0) -> list[CrackComponent]:
    """Keep line-like components: area >= min_area and elongation >= min_elongation."""
    if min_area < 1 or min_elongation < 1:
        raise InvalidParameter("min_area and min_elongation must be >= 1")
    return [c for c in components if c.area >= min_area and c.elongation >= min_elongation]


@dataclass(frozen=True)
class DetectParams:
    sauvola: SauvolaParams = field(default_factory=SauvolaParams)
    min_area: int = 30
    min_elongation: float = 3.0
    median: int = 0


def detect_cracks(gray: np.ndarray, params: DetectParams = DetectParams(), image_id: str = "") -> CrackReport:
    mask = binarize_local(gray, params.sauvola, params.median)
    comps = filter_candidates(connected_components(mask), params.min_area, params.min_elongation)
    return CrackReport(image_id, params.sauvola, comps, mask)


def components_mask(shape, components: list[CrackComponent]) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for c in components:
        out[c.ys, c.xs] = True
    return out
