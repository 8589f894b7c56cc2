"""Difference-of-Gaussians keypoints with 4x4x8 gradient-histogram descriptors.

Constants are the customary SIFT ones: 3 scales per octave, base sigma 1.6, contrast
threshold 0.03 on a unit intensity range, principal-curvature ratio 10,
36-bin orientation histogram, descriptor clamp 0.2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter, zoom

from ..errors import ImageTooSmall
from ..imaging import check_raster

MIN_SIZE = 32


@dataclass(frozen=True)
class SiftParams:
    sigma: float = 1.6
    scales_per_octave: int = 3
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    assumed_blur: float = 0.5
    upsample: bool = False
    border: int = 5
    orientation_peak_ratio: float = 0.8
    descriptor_clamp: float = 0.2
    max_octaves: int | None = None


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    descriptor: np.ndarray
    response: float = 0.0


@dataclass
class _Octave:
    index: int
    gauss: np.ndarray  # (S+3, H, W)
    dog: np.ndarray  # (S+2, H, W)
    sigmas: np.ndarray  # absolute octave-relative sigma of each gaussian layer


def _pyramid(img: np.ndarray, p: SiftParams) -> tuple[list[_Octave], float]:
    base = img.astype(np.float64) / 255.0
    pix_scale = 1.0
    blur = p.assumed_blur
    if p.upsample:
        base = zoom(base, 2, order=1)
        pix_scale = 0.5
        blur *= 2
    base = gaussian_filter(base, math.sqrt(max(p.sigma**2 - blur**2, 0.01)), mode="nearest")

    S = p.scales_per_octave
    k = 2.0 ** (1.0 / S)
    sigmas = p.sigma * k ** np.arange(S + 3)
    increments = [math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2) for i in range(1, S + 3)]
    n_oct = max(1, int(math.floor(math.log2(min(base.shape)))) - 3)
    if p.max_octaves:
        n_oct = min(n_oct, p.max_octaves)

    octaves = []
    cur = base
    for o in range(n_oct):
        layers = [cur]
        for inc in increments:
            layers.append(gaussian_filter(layers[-1], inc, mode="nearest"))
        gauss = np.stack(layers)
        octaves.append(_Octave(o, gauss, gauss[1:] - gauss[:-1], sigmas))
        cur = gauss[S][::2, ::2]
        if min(cur.shape) < 2 * p.border + 3:
            break
    return octaves, pix_scale


def _derivatives(d: np.ndarray, s: int, y: int, x: int):
    c = d[s, y, x]
    g = 0.5 * np.array([d[s, y, x + 1] - d[s, y, x - 1], d[s, y + 1, x] - d[s, y - 1, x], d[s + 1, y, x] - d[s - 1, y, x]])
    dxx = d[s, y, x + 1] - 2 * c + d[s, y, x - 1]
    dyy = d[s, y + 1, x] - 2 * c + d[s, y - 1, x]
    dss = d[s + 1, y, x] - 2 * c + d[s - 1, y, x]
    dxy = 0.25 * (d[s, y + 1, x + 1] - d[s, y + 1, x - 1] - d[s, y - 1, x + 1] + d[s, y - 1, x - 1])
    dxs = 0.25 * (d[s + 1, y, x + 1] - d[s + 1, y, x - 1] - d[s - 1, y, x + 1] + d[s - 1, y, x - 1])
    dys = 0.25 * (d[s + 1, y + 1, x] - d[s + 1, y - 1, x] - d[s - 1, y + 1, x] + d[s - 1, y - 1, x])
    h = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return c, g, h


def _localize(oc: _Octave, s: int, y: int, x: int, p: SiftParams):
    """Quadratic refinement of a discrete extremum; None when rejected."""
    d = oc.dog
    S = p.scales_per_octave
    _, hgt, wid = d.shape
    for _ in range(5):
        c, g, h = _derivatives(d, s, y, x)
        try:
            off = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(off) < 0.5):
            break
        x += int(round(off[0]))
        y += int(round(off[1]))
        s += int(round(off[2]))
        if not (p.border <= y < hgt - p.border and p.border <= x < wid - p.border and 1 <= s <= S):
            return None
    else:
        return None
    value = c + 0.5 * g @ off
    if abs(value) < p.contrast_threshold:
        return None
    tr = h[0, 0] + h[1, 1]
    det = h[0, 0] * h[1, 1] - h[0, 1] ** 2
    r = p.edge_ratio
    if det <= 0 or tr * tr * r >= (r + 1) ** 2 * det:
        return None
    return s, y, x, off, abs(value)


def _orientations(gimg: np.ndarray, x: float, y: float, sig: float, p: SiftParams) -> list[float]:
    wsig = 1.5 * sig
    radius = int(round(3 * wsig))
    hgt, wid = gimg.shape
    xi, yi = int(round(x)), int(round(y))
    y0, y1 = max(yi - radius, 1), min(yi + radius, hgt - 2)
    x0, x1 = max(xi - radius, 1), min(xi + radius, wid - 2)
    if y1 < y0 or x1 < x0:
        return []
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    dx = gimg[yy, xx + 1] - gimg[yy, xx - 1]
    dy = gimg[yy + 1, xx] - gimg[yy - 1, xx]
    mag = np.hypot(dx, dy)
    ang = np.arctan2(dy, dx)
    weight = np.exp(-((xx - xi) ** 2 + (yy - yi) ** 2) / (2 * wsig**2))
    nb = 36
    bins = np.round(ang * nb / (2 * np.pi)).astype(int) % nb
    hist = np.bincount(bins.ravel(), (weight * mag).ravel(), minlength=nb)
    smooth = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1)) + np.roll(hist, 2) + np.roll(hist, -2)) / 16.0
    peak = smooth.max()
    if peak <= 0:
        return []
    out = []
    left, right = np.roll(smooth, 1), np.roll(smooth, -1)
    for i in np.flatnonzero((smooth > left) & (smooth > right) & (smooth >= p.orientation_peak_ratio * peak)):
        l, c, r = left[i], smooth[i], right[i]
        frac = 0.5 * (l - r) / (l - 2 * c + r)
        theta = ((i + frac) % nb) * 2 * np.pi / nb
        if theta > np.pi:
            theta -= 2 * np.pi
        out.append(float(theta))
    return out


def _descriptor(gimg: np.ndarray, x: float, y: float, sig: float, theta: float, p: SiftParams) -> np.ndarray:
    d, nbins = 4, 8
    hist_width = 3.0 * sig
    hgt, wid = gimg.shape
    radius = int(round(hist_width * math.sqrt(2) * (d + 1) * 0.5))
    radius = min(radius, int(math.hypot(hgt, wid)))
    xi, yi = int(round(x)), int(round(y))
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    oy, ox = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    py, px = oy + yi, ox + xi
    ok = (py >= 1) & (py < hgt - 1) & (px >= 1) & (px < wid - 1)
    # offsets relative to the subpixel location, rotated into the keypoint frame
    fx, fy = (px - x)[ok], (py - y)[ok]
    along = (cos_t * fx + sin_t * fy) / hist_width
    across = (-sin_t * fx + cos_t * fy) / hist_width
    rbin = across + d / 2 - 0.5
    cbin = along + d / 2 - 0.5
    inside = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    py, px = py[ok][inside], px[ok][inside]
    rbin, cbin = rbin[inside], cbin[inside]
    along, across = along[inside], across[inside]

    gx = gimg[py, px + 1] - gimg[py, px - 1]
    gy = gimg[py + 1, px] - gimg[py - 1, px]
    mag = np.hypot(gx, gy) * np.exp(-(along**2 + across**2) / (2 * (0.5 * d) ** 2))
    obin = ((np.arctan2(gy, gx) - theta) % (2 * np.pi)) * nbins / (2 * np.pi)

    r0, c0, o0 = np.floor(rbin).astype(int), np.floor(cbin).astype(int), np.floor(obin).astype(int)
    rf, cf, of = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2, d + 2, nbins))
    for dr, wr in ((0, 1 - rf), (1, rf)):
        for dc, wc in ((0, 1 - cf), (1, cf)):
            for do, wo in ((0, 1 - of), (1, of)):
                np.add.at(hist, (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % nbins), mag * wr * wc * wo)
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return np.full(d * d * nbins, 1.0 / math.sqrt(d * d * nbins))
    vec = np.minimum(vec / norm, p.descriptor_clamp)
    return vec / np.linalg.norm(vec)


def detect_keypoints(img: np.ndarray, params: SiftParams = SiftParams()) -> list[Keypoint]:
    """Scale-space extrema of the DoG pyramid with orientations and descriptors.

    Coordinates are in input-image pixels (x = column, y = row); ``scale`` is
    the keypoint sigma in input pixels.
    """
    img = check_raster(img, channels=1)
    if min(img.shape) < MIN_SIZE:
        raise ImageTooSmall(f"image {img.shape[1]}x{img.shape[0]} below {MIN_SIZE}x{MIN_SIZE}")
    p = params
    octaves, pix_scale = _pyramid(img, p)
    prethresh = 0.5 * p.contrast_threshold / p.scales_per_octave
    kps: list[Keypoint] = []
    for oc in octaves:
        d = oc.dog
        is_max = d == maximum_filter(d, size=3, mode="nearest")
        is_min = d == minimum_filter(d, size=3, mode="nearest")
        cand = (is_max | is_min) & (np.abs(d) > prethresh)
        cand[0] = cand[-1] = False
        b = p.border
        cand[:, :b] = cand[:, -b:] = False
        cand[:, :, :b] = cand[:, :, -b:] = False
        seen = set()
        factor = (2.0**oc.index) * pix_scale
        for s, y, x in zip(*np.nonzero(cand)):
            loc = _localize(oc, int(s), int(y), int(x), p)
            if loc is None:
                continue
            s2, y2, x2, off, resp = loc
            if (s2, y2, x2) in seen:
                continue
            seen.add((s2, y2, x2))
            xo, yo = x2 + off[0], y2 + off[1]
            sig = p.sigma * 2.0 ** ((s2 + off[2]) / p.scales_per_octave)
            gimg = oc.gauss[s2]
            for theta in _orientations(gimg, xo, yo, sig, p):
                desc = _descriptor(gimg, xo, yo, sig, theta, p)
                kps.append(Keypoint(xo * factor, yo * factor, sig * factor, theta, desc, resp))
    kps.sort(key=lambda k: (k.y, k.x, k.scale, k.orientation))
    return kps


def descriptor_matrix(kps: list[Keypoint]) -> np.ndarray:
    if not kps:
        return np.zeros((0, 128))
    return np.stack([k.descriptor for k in kps])


def keypoint_coords(kps: list[Keypoint]) -> np.ndarray:
    return np.array([[k.x, k.y] for k in kps], dtype=float).reshape(-1, 2)
