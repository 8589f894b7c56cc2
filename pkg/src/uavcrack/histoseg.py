"""Histogram peaks, midpoint thresholds and removal of stitching patterns.

A stitched survey image holds three dominant intensity populations in its red
channel: blank (unmapped) area, inspected surface, and the high-contrast
markers used for stitching. The three most prominent histogram peaks give
``(i_b, i_w, i_p)``; pixels whose red value lies outside the midpoints are
painted ``beta`` in the gray output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, PeaksNotFound
from .imaging import check_raster, red_channel, to_gray


@dataclass(frozen=True)
class Histogram:
    bins: np.ndarray  # (256,) int64

    @property
    def total(self) -> int:
        return int(self.bins.sum())


@dataclass(frozen=True)
class PeakSet:
    i_b: int
    i_w: int
    i_p: int

    def __post_init__(self):
        if not (0 <= self.i_b < self.i_w < self.i_p <= 255):
            raise InvalidParameter(f"peaks must satisfy 0 <= i_b < i_w < i_p <= 255, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.i_b, self.i_w, self.i_p)


@dataclass(frozen=True)
class ThresholdPair:
    t1: float
    t2: float


def compute_histogram(channel: np.ndarray, mask: np.ndarray | None = None) -> Histogram:
    channel = check_raster(channel, channels=1)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != channel.shape:
            raise DimensionMismatch(f"mask {mask.shape} vs image {channel.shape}")
        values = channel[mask]
    else:
        values = channel.ravel()
    return Histogram(np.bincount(values, minlength=256).astype(np.int64))


def smooth(values: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average with mirrored (edge-repeating) boundaries."""
    if width < 1 or width % 2 == 0:
        raise InvalidParameter("smoothing window must be a positive odd integer")
    x = np.asarray(values, dtype=np.float64)
    if width == 1:
        return x.copy()
    half = width // 2
    padded = np.pad(x, half, mode="symmetric")
    c = np.concatenate([[0.0], np.cumsum(padded)])
    return (c[width:] - c[:-width]) / width


def local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of strict local maxima; a flat top reports its (left-biased) middle."""
    peaks = []
    n = len(x)
    i = 1
    while i < n - 1:
        if x[i - 1] < x[i]:
            j = i
            while j + 1 < n - 1 and x[j + 1] == x[i]:
                j += 1
            if x[j + 1] < x[i]:
                peaks.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return np.array(peaks, dtype=np.intp)


def prominences(x: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    """Height of each peak above the higher of its two flanking minima.

    A flank extends until the signal rises above the peak or the array ends.
    """
    out = np.empty(len(peaks))
    n = len(x)
    for k, p in enumerate(peaks):
        v = x[p]
        i, left_min = p, v
        while i > 0 and x[i - 1] <= v:
            i -= 1
            left_min = min(left_min, x[i])
        i, right_min = p, v
        while i < n - 1 and x[i + 1] <= v:
            i += 1
            right_min = min(right_min, x[i])
        out[k] = v - max(left_min, right_min)
    return out


def detect_peaks(h: Histogram, smooth_w: int = 5, min_prominence: float = 0.05, min_sep: int = 10) -> PeakSet:
    """The three most prominent, well separated histogram peaks in ascending order.

    The smoothed histogram is zero-padded on both sides so that populations
    sitting at intensity 0 or 255 still register as peaks.
    """
    if h.total <= 0:
        raise PeaksNotFound(0)
    s = smooth(h.bins, smooth_w)
    padded = np.concatenate([[0.0], s, [0.0]])
    cand = local_maxima(padded)
    prom = prominences(padded, cand)
    cand = cand - 1
    floor = min_prominence * s.max()
    keep = prom >= floor
    cand, prom = cand[keep], prom[keep]
    chosen: list[int] = []
    for idx in np.lexsort((cand, -prom)):
        p = int(cand[idx])
        if all(abs(p - q) >= min_sep for q in chosen):
            chosen.append(p)
    if len(chosen) < 3:
        raise PeaksNotFound(len(chosen))
    return PeakSet(*sorted(chosen[:3]))


def compute_thresholds(p: PeakSet) -> ThresholdPair:
    return ThresholdPair((p.i_b + p.i_w) / 2.0, (p.i_w + p.i_p) / 2.0)


def remove_patterns(mosaic: np.ndarray, t: ThresholdPair, beta: int = 255) -> np.ndarray:
    """Gray image with ``beta`` wherever red < t1 or red > t2 (strict)."""
    if not 0 <= beta <= 255:
        raise InvalidParameter("beta must lie in [0, 255]")
    red = red_channel(mosaic).astype(np.float64)
    gray = to_gray(mosaic)
    out = gray.copy()
    out[(red < t.t1) | (red > t.t2)] = beta
    return out


def segment(mosaic: np.ndarray, mask: np.ndarray | None = None, beta: int = 255, smooth_w: int = 5,
            min_prominence: float = 0.05, min_sep: int = 10) -> tuple[np.ndarray, dict]:
    """Histogram, peaks, thresholds and pattern removal in one call."""
    hist = compute_histogram(red_channel(mosaic), mask)
    peaks = detect_peaks(hist, smooth_w, min_prominence, min_sep)
    thr = compute_thresholds(peaks)
    out = remove_patterns(mosaic, thr, beta)
    diag = {
        "histogram": [int(v) for v in hist.bins],
        "peaks": {"i_b": peaks.i_b, "i_w": peaks.i_w, "i_p": peaks.i_p},
        "thresholds": {"t1": thr.t1, "t2": thr.t2},
        "beta": beta,
    }
    return out, diag
