"""Synthetic reproduction of the nine-panel wooden test wall.

The generator renders a textured wall with panel seams, pink stitching
markers and dark random-walk cracks under an optional linear illumination
gradient, then cuts overlapping survey tiles through known homographies.
Everything is deterministic for a given seed.
"""
from __future__ import annotations

import math
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidParameter, IoError
from .imaging import LUMA_WEIGHTS, write_png
from .pointcloud import PointCloud, save_xyz


def _luma(rgb) -> float:
    return float(np.dot(LUMA_WEIGHTS, rgb))


@dataclass(frozen=True)
class SynthWallSpec:
    panel_rows: int = 3
    panel_cols: int = 3
    panel_size_mm: tuple[float, float] = (600.0, 900.0)  # width, height
    px_per_mm: float = 0.4
    surface_rgb: tuple[int, int, int] = (175, 182, 165)
    grain_amplitude: float = 6.0
    mottle_amplitude: float = 6.0
    knots_per_panel: int = 4
    knot_depth: float = 35.0
    seam_rgb: tuple[int, int, int] = (148, 152, 138)
    seam_width_px: int = 2
    pattern_count: int = 18
    pattern_rgb: tuple[int, int, int] = (230, 30, 140)
    pattern_size_mm: tuple[float, float] = (300.0, 450.0)
    marker_dots: int = 60
    crack_count: int = 2
    crack_width_px: int = 3
    crack_rgb: tuple[int, int, int] = (105, 35, 30)
    crack_length_mm: tuple[float, float] = (450.0, 650.0)
    tile_rows: int = 3
    tile_cols: int = 3
    overlap: float = 0.3
    rotation_deg: float = 1.5
    scale_jitter: float = 0.03
    shift_jitter: float = 0.02
    perspective: float = 2e-5
    illumination_gradient: float = 0.05
    cloud_spacing_m: float = 0.03
    cloud_noise_m: float = 0.002
    include_frame: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.1 <= self.overlap <= 0.9:
            raise InvalidParameter("tile overlap must lie in [0.1, 0.9]")
        if not _luma(self.crack_rgb) < _luma(self.surface_rgb) < self.pattern_rgb[0]:
            raise InvalidParameter("need crack intensity < surface intensity < pattern red intensity")
        for name in ("panel_rows", "panel_cols", "tile_rows", "tile_cols", "crack_width_px", "seam_width_px"):
            if getattr(self, name) < 1:
                raise InvalidParameter(f"{name} must be >= 1")
        if self.pattern_count < 0 or self.crack_count < 0:
            raise InvalidParameter("pattern_count and crack_count must be >= 0")
        if not self.px_per_mm > 0:
            raise InvalidParameter("px_per_mm must be positive")
        if not 0 <= self.illumination_gradient < 1:
            raise InvalidParameter("illumination_gradient must lie in [0, 1)")

    @property
    def panel_px(self) -> tuple[int, int]:
        return (int(round(self.panel_size_mm[0] * self.px_per_mm)), int(round(self.panel_size_mm[1] * self.px_per_mm)))

    @property
    def wall_px(self) -> tuple[int, int]:
        pw, ph = self.panel_px
        return pw * self.panel_cols, ph * self.panel_rows


@dataclass
class SynthWall:
    spec: SynthWallSpec
    wall: np.ndarray  # RGB
    tiles: list[np.ndarray]
    homographies: list[np.ndarray]  # tile pixel -> wall pixel
    pattern_mask: np.ndarray
    crack_mask: np.ndarray
    crack_skeleton: np.ndarray
    crack_labels: np.ndarray  # 0 background, i+1 for crack i (dilated mask)
    crack_polylines: list[np.ndarray]
    seam_mask: np.ndarray
    cloud: PointCloud
    frame_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))


def _fill_polygon(shape, verts: np.ndarray) -> np.ndarray:
    """Even-odd rasterization of a simple polygon given as (x, y) vertices."""
    h, w = shape
    out = np.zeros(shape, dtype=bool)
    x0, y0 = np.maximum(np.floor(verts.min(0)).astype(int), 0)
    x1, y1 = np.minimum(np.ceil(verts.max(0)).astype(int), [w - 1, h - 1])
    if x1 < x0 or y1 < y0:
        return out
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(float)
    inside = np.zeros(yy.shape, dtype=bool)
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        if a[1] == b[1]:
            continue
        crosses = (a[1] > yy) != (b[1] > yy)
        xint = a[0] + (yy - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        inside ^= crosses & (xx < xint)
    out[y0 : y1 + 1, x0 : x1 + 1] = inside
    return out


def _star(rng, cx, cy, size) -> np.ndarray:
    """Irregular star-shaped marker outline with sharp tips."""
    k = int(rng.integers(4, 7))
    base = rng.uniform(0, 2 * np.pi)
    ang = base + (np.arange(2 * k) + rng.uniform(-0.25, 0.25, 2 * k)) * np.pi / k
    radius = 0.5 * size * np.where(np.arange(2 * k) % 2 == 0, rng.uniform(0.75, 1.0, 2 * k), rng.uniform(0.3, 0.5, 2 * k))
    return np.column_stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)])


def _random_walk(rng, start, heading, length_px, bounds, step=1.5, turn=0.12, pull=0.1):
    """Jagged polyline whose heading wanders around a base direction.

    The deviation follows a mean-reverting walk (``pull`` toward the base
    heading each step), so cracks meander locally but keep a main direction.
    Stops at the panel bounds.
    """
    x0, y0, x1, y1 = bounds
    pts = [np.array(start, dtype=float)]
    travelled, dev = 0.0, 0.0
    while travelled < length_px:
        dev = (1.0 - pull) * dev + rng.normal(0.0, turn)
        nxt = pts[-1] + step * np.array([math.cos(heading + dev), math.sin(heading + dev)])
        if not (x0 <= nxt[0] <= x1 and y0 <= nxt[1] <= y1):
            break
        pts.append(nxt)
        travelled += step
    return np.array(pts)


def _rasterize_polyline(shape, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for a, b in zip(pts, pts[1:]):
        n = max(int(math.ceil(np.linalg.norm(b - a) * 4)), 1)
        t = np.linspace(0, 1, n + 1)[:, None]
        seg = np.rint(a + t * (b - a)).astype(int)
        out[seg[:, 1], seg[:, 0]] = True
    return out


def _tile_homography(center, tile_size, theta, scale, persp) -> np.ndarray:
    tw, th = tile_size
    to_center = np.array([[1, 0, -(tw - 1) / 2], [0, 1, -(th - 1) / 2], [0, 0, 1.0]])
    c, s = math.cos(theta), math.sin(theta)
    rs = np.array([[scale * c, -scale * s, 0], [scale * s, scale * c, 0], [0, 0, 1.0]])
    p = np.array([[1, 0, 0], [0, 1, 0], [persp[0], persp[1], 1.0]])
    move = np.array([[1, 0, center[0]], [0, 1, center[1]], [0, 0, 1.0]])
    h = move @ p @ rs @ to_center
    return h / h[2, 2]


def _apply(h, pts):
    q = pts @ h[:, :2].T + h[:, 2]
    return q[:, :2] / q[:, 2:3]


def _wall_cloud(spec: SynthWallSpec, rng) -> tuple[PointCloud, np.ndarray]:
    wmm, hmm = spec.panel_size_mm[0] * spec.panel_cols, spec.panel_size_mm[1] * spec.panel_rows
    wm, hm = wmm / 1000.0, hmm / 1000.0
    sp = spec.cloud_spacing_m
    xs = np.arange(0.0, wm + 1e-9, sp)
    zs = np.arange(0.0, hm + 1e-9, sp)
    xx, zz = np.meshgrid(xs, zs)
    wall = np.column_stack([xx.ravel(), np.zeros(xx.size), zz.ravel()])
    wall += rng.normal(0.0, spec.cloud_noise_m, wall.shape)
    frame = np.zeros((0, 3))
    if spec.include_frame:
        boxes = [
            ((-0.15, 0.05, 0.0), (-0.05, 0.15, hm + 0.3)),
            ((wm + 0.05, 0.05, 0.0), (wm + 0.15, 0.15, hm + 0.3)),
            ((-0.15, 0.05, hm + 0.2), (wm + 0.15, 0.15, hm + 0.3)),
        ]
        parts = []
        for lo, hi in boxes:
            lo, hi = np.array(lo), np.array(hi)
            axes = [np.arange(lo[i], hi[i] + 1e-9, sp) for i in range(3)]
            g = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
            # keep the box surface only
            on = np.zeros(len(g), dtype=bool)
            for i in range(3):
                on |= np.isclose(g[:, i], axes[i][0]) | np.isclose(g[:, i], axes[i][-1])
            parts.append(g[on])
        frame = np.vstack(parts) + rng.normal(0.0, spec.cloud_noise_m, (sum(len(p) for p in parts), 3))
    pts = np.vstack([wall, frame])
    return PointCloud(pts, scan_origin=np.array([wm / 2, 5.0, hm / 2])), frame


def synth_wall(spec: SynthWallSpec = SynthWallSpec()) -> SynthWall:
    rng = np.random.default_rng(spec.seed)
    pw, ph = spec.panel_px
    W, H = spec.wall_px
    shape = (H, W)

    # wood texture: vertically streaked grain noise
    grain = ndimage.gaussian_filter(rng.normal(size=shape), sigma=(6.0, 1.2))
    grain *= spec.grain_amplitude / max(grain.std(), 1e-12)
    wall = np.empty(shape + (3,))
    wall[:] = np.array(spec.surface_rgb, dtype=float)
    wall += grain[..., None]
    # weathering stains: isotropic blotches at a few scales
    if spec.mottle_amplitude > 0:
        mottle = sum(ndimage.gaussian_filter(rng.normal(size=shape), sg) * sg for sg in (2.0, 4.0, 8.0))
        mottle *= spec.mottle_amplitude / max(mottle.std(), 1e-12)
        wall += mottle[..., None]

    # knots: soft dark ellipses elongated along the grain
    n_knots = spec.knots_per_panel * spec.panel_rows * spec.panel_cols
    if n_knots:
        yy, xx = np.mgrid[0:H, 0:W]
        shade = np.zeros(shape)
        for _ in range(n_knots):
            kx, ky = rng.uniform(0, W), rng.uniform(0, H)
            ax = rng.uniform(4, 9) * spec.px_per_mm / 0.4
            ay = ax * rng.uniform(1.5, 2.5)
            y0, y1 = int(max(ky - 4 * ay, 0)), int(min(ky + 4 * ay, H))
            x0, x1 = int(max(kx - 4 * ax, 0)), int(min(kx + 4 * ax, W))
            sub = ((xx[y0:y1, x0:x1] - kx) / ax) ** 2 + ((yy[y0:y1, x0:x1] - ky) / ay) ** 2
            shade[y0:y1, x0:x1] += spec.knot_depth * rng.uniform(0.5, 1.0) * np.exp(-0.5 * sub)
        wall -= np.minimum(shade, spec.knot_depth)[..., None]

    seams = np.zeros(shape, dtype=bool)
    sw = spec.seam_width_px
    for c in range(1, spec.panel_cols):
        x = c * pw - sw // 2
        seams[:, max(x, 0) : x + sw] = True
    for r in range(1, spec.panel_rows):
        y = r * ph - sw // 2
        seams[max(y, 0) : y + sw, :] = True
    wall[seams] = spec.seam_rgb

    # cracks: first in the middle panel, second in the bottom-right one
    panels = [(r, c) for r in range(spec.panel_rows) for c in range(spec.panel_cols)]
    chosen = []
    if spec.crack_count >= 1:
        chosen.append((spec.panel_rows // 2, spec.panel_cols // 2))
    if spec.crack_count >= 2:
        chosen.append((spec.panel_rows - 1, spec.panel_cols - 1))
    others = [p for p in panels if p not in chosen]
    while len(chosen) < spec.crack_count:
        chosen.append(others.pop(int(rng.integers(len(others)))) if others else panels[int(rng.integers(len(panels)))])

    skeleton = np.zeros(shape, dtype=bool)
    crack_labels = np.zeros(shape, dtype=np.int32)
    crack_mask = np.zeros(shape, dtype=bool)
    polylines = []
    pad = 0.12
    rad = (spec.crack_width_px - 1) / 2.0
    for i, (r, c) in enumerate(chosen):
        bounds = (c * pw + pad * pw, r * ph + pad * ph, (c + 1) * pw - pad * pw, (r + 1) * ph - pad * ph)
        lo_len, hi_len = (v * spec.px_per_mm for v in spec.crack_length_mm)
        target = rng.uniform(lo_len, hi_len)
        best = None
        for _ in range(50):
            start = (rng.uniform(bounds[0], bounds[2]), rng.uniform(bounds[1], bounds[3]))
            line = _random_walk(rng, start, rng.uniform(-math.pi, math.pi), target, bounds)
            if best is None or len(line) > len(best):
                best = line
            if len(line) * 1.5 >= 0.9 * target:
                break
        polylines.append(best)
        skel = _rasterize_polyline(shape, best)
        one = ndimage.distance_transform_edt(~skel) <= rad + 1e-9
        skeleton |= skel
        crack_mask |= one
        crack_labels[one] = i + 1
    crack_noise = rng.normal(0.0, 3.0, shape)
    wall[crack_mask] = np.array(spec.crack_rgb, dtype=float) + crack_noise[crack_mask][:, None]

    # stitching markers on a jittered grid over the wall, kept off the cracks
    forbidden = ndimage.binary_dilation(crack_mask, iterations=6)
    pattern_mask = np.zeros(shape, dtype=bool)
    lo_sz, hi_sz = (v * spec.px_per_mm for v in spec.pattern_size_mm)
    gcols = max(1, int(round(np.sqrt(spec.pattern_count * W / H)))) if spec.pattern_count else 1
    grows = -(-spec.pattern_count // gcols)
    cw, ch = W / gcols, H / grows
    for i in range(spec.pattern_count):
        r, c = divmod(i, gcols)
        for _ in range(200):
            size = rng.uniform(lo_sz, hi_sz)
            cx = rng.uniform(c * cw, (c + 1) * cw)
            cy = rng.uniform(r * ch, (r + 1) * ch)
            poly = _fill_polygon(shape, _star(rng, cx, cy, 0.3 * size))
            # detached satellite dots around the star give the sticker fine detail
            dots: list[tuple[float, float, float]] = []
            for _ in range(4 * spec.marker_dots):
                if len(dots) == spec.marker_dots:
                    break
                ang, rad = rng.uniform(0, 2 * np.pi), 0.5 * size * np.sqrt(rng.uniform(0.04, 1.0))
                dr = rng.uniform(8.0, 15.0) * spec.px_per_mm
                dx, dy = cx + rad * np.cos(ang), cy + rad * np.sin(ang)
                if all((dx - ex) ** 2 + (dy - ey) ** 2 > (dr + er + 4) ** 2 for ex, ey, er in dots):
                    dots.append((dx, dy, dr))
            for dx, dy, dr in dots:
                y0, y1 = int(max(dy - dr, 0)), int(min(dy + dr + 1, H))
                x0, x1 = int(max(dx - dr, 0)), int(min(dx + dr + 1, W))
                if y1 <= y0 or x1 <= x0:
                    continue
                yy, xx = np.mgrid[y0:y1, x0:x1]
                poly[y0:y1, x0:x1] |= (xx - dx) ** 2 + (yy - dy) ** 2 <= dr * dr
            if poly.any() and not (poly & forbidden).any():
                pattern_mask |= poly
                forbidden |= ndimage.binary_dilation(poly, iterations=4)
                break
    wall[pattern_mask] = np.array(spec.pattern_rgb, dtype=float) + rng.normal(0.0, 2.0, (int(pattern_mask.sum()), 1))

    if spec.illumination_gradient:
        a = spec.illumination_gradient
        gain = 1.0 - a + 2.0 * a * np.arange(W) / max(W - 1, 1)
        wall *= gain[None, :, None]
    wall_u8 = np.clip(np.rint(wall), 0, 255).astype(np.uint8)

    tiles, homs = _cut_tiles(spec, wall_u8, rng)
    cloud, frame = _wall_cloud(spec, rng)
    return SynthWall(spec, wall_u8, tiles, homs, pattern_mask, crack_mask, skeleton, crack_labels, polylines,
                     seams, cloud, frame)


def _cut_tiles(spec: SynthWallSpec, wall: np.ndarray, rng) -> tuple[list[np.ndarray], list[np.ndarray]]:
    H, W = wall.shape[:2]
    margin = 0.03 * min(W, H)
    eff_w, eff_h = W - 2 * margin, H - 2 * margin
    tw = int(round(eff_w / (spec.tile_cols - (spec.tile_cols - 1) * spec.overlap)))
    th = int(round(eff_h / (spec.tile_rows - (spec.tile_rows - 1) * spec.overlap)))
    step_x = tw * (1 - spec.overlap)
    step_y = th * (1 - spec.overlap)
    corners = np.array([[0, 0], [tw - 1, 0], [tw - 1, th - 1], [0, th - 1]], dtype=float)
    tiles, homs = [], []
    yy, xx = np.mgrid[0:th, 0:tw]
    grid = np.column_stack([xx.ravel(), yy.ravel()]).astype(float)
    for r in range(spec.tile_rows):
        for c in range(spec.tile_cols):
            nominal = (margin + (tw - 1) / 2 + c * step_x, margin + (th - 1) / 2 + r * step_y)
            jitter = 1.0
            for attempt in range(200):
                theta = math.radians(spec.rotation_deg) * jitter * rng.uniform(-1, 1)
                scale = 1.0 + spec.scale_jitter * jitter * rng.uniform(-1, 1)
                shift = spec.shift_jitter * jitter * np.array([tw, th]) * rng.uniform(-1, 1, 2)
                persp = spec.perspective * jitter * rng.uniform(-1, 1, 2)
                h = _tile_homography(np.array(nominal) + shift, (tw, th), theta, scale, persp)
                wc = _apply(h, corners)
                if wc.min() >= 0 and np.all(wc.max(0) <= [W - 1, H - 1]):
                    break
                if attempt % 20 == 19:
                    jitter *= 0.5
            else:
                h = _tile_homography(np.array(nominal), (tw, th), 0.0, 1.0, (0.0, 0.0))
            src = _apply(h, grid)
            tile = np.empty((th, tw, 3), dtype=np.uint8)
            for ch in range(3):
                vals = ndimage.map_coordinates(wall[..., ch].astype(float), [src[:, 1], src[:, 0]], order=1, mode="nearest")
                tile[..., ch] = np.clip(np.rint(vals), 0, 255).astype(np.uint8).reshape(th, tw)
            tiles.append(tile)
            homs.append(h)
    return tiles, homs


def crop_tiles(image: np.ndarray, cols: int = 2, rows: int = 1, overlap: float = 0.3) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Axis-aligned crops with the given overlap, plus their crop->image translations."""
    H, W = image.shape[:2]
    tw = int(W / (cols - (cols - 1) * overlap))
    th = int(H / (rows - (rows - 1) * overlap))
    tiles, homs = [], []
    for r in range(rows):
        for c in range(cols):
            x0 = int(round(c * tw * (1 - overlap)))
            y0 = int(round(r * th * (1 - overlap)))
            x0, y0 = min(x0, W - tw), min(y0, H - th)
            tiles.append(image[y0 : y0 + th, x0 : x0 + tw].copy())
            homs.append(np.array([[1, 0, x0], [0, 1, y0], [0, 0, 1.0]]))
    return tiles, homs


def mosaic_ground_truth(sw: SynthWall, mosaic, wall_mask: np.ndarray) -> np.ndarray:
    """Pull a wall-frame mask into a mosaic through the tile each mosaic pixel came from.

    Compositing is last-writer-wins, so each covered mosaic pixel is traced back
    through its own tile's estimated homography and that tile's true placement.
    Stitching error therefore does not leak into the labels.
    """
    hh, ww = mosaic.mask.shape
    yy, xx = np.mgrid[0:hh, 0:ww]
    pts = np.column_stack([xx.ravel(), yy.ravel()]).astype(float)
    out = np.zeros(hh * ww, dtype=wall_mask.dtype)
    todo = mosaic.mask.ravel().copy()
    for tile, h_tile_wall, h_tile_mosaic in reversed(list(zip(sw.tiles, sw.homographies, mosaic.homographies))):
        th, tw = tile.shape[:2]
        txy = _apply(np.linalg.inv(h_tile_mosaic), pts)
        eps = 1e-6
        inside = todo & (txy[:, 0] >= -eps) & (txy[:, 0] <= tw - 1 + eps) & (txy[:, 1] >= -eps) & (txy[:, 1] <= th - 1 + eps)
        idx = np.flatnonzero(inside)
        wxy = np.rint(_apply(h_tile_wall, txy[idx])).astype(int)
        ok = (wxy[:, 0] >= 0) & (wxy[:, 0] < wall_mask.shape[1]) & (wxy[:, 1] >= 0) & (wxy[:, 1] < wall_mask.shape[0])
        out[idx[ok]] = wall_mask[wxy[ok, 1], wxy[ok, 0]]
        todo &= ~inside
    return out.reshape(hh, ww)


def save_synth_wall(sw: SynthWall, out: str | Path) -> dict:
    """Write tiles, wall, ground-truth masks, homographies and cloud under ``out``.

    Tiles go to ``out/tiles`` so that directory can be fed straight to the
    stitcher.
    """
    out = Path(out)
    tiles_dir = out / "tiles"
    try:
        tiles_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {tiles_dir}: {exc}") from exc
    names = []
    for i, tile in enumerate(sw.tiles):
        name = f"tile_{i:02d}.png"
        write_png(tiles_dir / name, tile)
        names.append(name)
    write_png(out / "wall.png", sw.wall)
    write_png(out / "pattern_mask.png", sw.pattern_mask)
    write_png(out / "crack_mask.png", sw.crack_mask)
    write_png(out / "crack_skeleton.png", sw.crack_skeleton)
    save_xyz(out / "cloud.xyz", sw.cloud)
    doc = {
        "spec": asdict(sw.spec),
        "wall_size_px": [int(sw.wall.shape[1]), int(sw.wall.shape[0])],
        "tiles": names,
        "tile_to_wall": [h.tolist() for h in sw.homographies],
        "crack_polylines": [np.round(p, 3).tolist() for p in sw.crack_polylines],
    }
    try:
        (out / "ground_truth.json").write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write ground truth: {exc}") from exc
    return {"tiles": str(tiles_dir), "cloud": str(out / "cloud.xyz"), "ground_truth": str(out / "ground_truth.json")}
