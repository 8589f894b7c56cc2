"""Raster primitives shared by the image-processing stages.

A raster is a ``uint8`` numpy array of shape ``(height, width)`` for a single
channel or ``(height, width, 3)`` for RGB. Binary masks are ``bool`` arrays of
shape ``(height, width)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, InvalidChannelCount, IoError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def check_raster(img: np.ndarray, channels: int | None = None) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        nch = 1
    elif img.ndim == 3 and img.shape[2] in (1, 3):
        nch = img.shape[2]
        if nch == 1:
            img = img[:, :, 0]
    else:
        raise InvalidChannelCount(f"unsupported raster shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionMismatch(f"empty raster {img.shape}")
    if channels is not None and nch != channels:
        raise InvalidChannelCount(f"expected {channels}-channel raster, got {nch}")
    if img.dtype != np.uint8:
        if np.issubdtype(img.dtype, np.floating) or np.issubdtype(img.dtype, np.integer):
            img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        else:
            raise InvalidChannelCount(f"unsupported dtype {img.dtype}")
    return img


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luma conversion, ``round(0.299 R + 0.587 G + 0.114 B)``."""
    img = check_raster(img, channels=3)
    rgb = img.astype(np.float64)
    gray = rgb[..., 0] * LUMA_WEIGHTS[0] + rgb[..., 1] * LUMA_WEIGHTS[1] + rgb[..., 2] * LUMA_WEIGHTS[2]
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def red_channel(img: np.ndarray) -> np.ndarray:
    img = check_raster(img, channels=3)
    return img[..., 0].copy()


@dataclass(frozen=True)
class IntegralImage:
    """Summed-area tables of intensities and squared intensities.

    Both tables have shape ``(h + 1, w + 1)`` with a zero first row and column
    and are stored as int64, so window sums are exact.
    """

    sums: np.ndarray
    sq_sums: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.sums.shape[0] - 1, self.sums.shape[1] - 1

    def window_sum(self, y0, x0, y1, x1):
        """Sum over rows ``y0..y1-1`` and columns ``x0..x1-1`` (half-open).

        Accepts scalars or broadcastable integer arrays.
        """
        t = self.sums
        return t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0]

    def window_sq_sum(self, y0, x0, y1, x1):
        t = self.sq_sums
        return t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0]


def build_integral(img: np.ndarray) -> IntegralImage:
    img = check_raster(img, channels=1).astype(np.int64)
    h, w = img.shape
    sums = np.zeros((h + 1, w + 1), dtype=np.int64)
    sq = np.zeros((h + 1, w + 1), dtype=np.int64)
    sums[1:, 1:] = img.cumsum(0).cumsum(1)
    sq[1:, 1:] = (img * img).cumsum(0).cumsum(1)
    sums.setflags(write=False)
    sq.setflags(write=False)
    return IntegralImage(sums, sq)


def read_image(path: str | Path) -> np.ndarray:
    """Load a PNG or binary PPM/PGM file as a uint8 raster."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "P", "1", "I", "I;16"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read raster {path}: {exc}") from exc
    return np.array(arr, dtype=np.uint8)


def write_png(path: str | Path, img: np.ndarray) -> None:
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    img = check_raster(img)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write raster {path}: {exc}") from exc


def read_mask(path: str | Path) -> np.ndarray:
    img = read_image(path)
    if img.ndim == 3:
        img = img[..., 0]
    return img > 127
