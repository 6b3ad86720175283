"""Margin crop, five-region decomposition, resizing and channel vectorization.

A registered 512x512 image loses 56 pixels per side, leaving a 400x400 crop.
That crop is divided into five 200x200 windows: four quadrants plus a centre
window that overlaps all of them.  Windows are addressed by (row, col) offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, validate_image

MARGIN = 56
RAW_SIZE = 512
CROP_SIZE = 400
REGION_SIZE = 200
CENTER_OFFSET = 100
FEATURE_INPUT_SIZE = 32   # regions 1..4 feed the extractor as 32x32 = 1024 vectors
FUSION_REGION5_SIZE = 30  # region 5 enters the composite as 30x30 = 900 pixels

# (row, col) offsets of regions 1..5 within the 400x400 crop.
REGION_OFFSETS = (
    (0, 0),                        # r1 top-left
    (0, REGION_SIZE),              # r2 top-right
    (REGION_SIZE, 0),              # r3 bottom-left
    (REGION_SIZE, REGION_SIZE),    # r4 bottom-right
    (CENTER_OFFSET, CENTER_OFFSET),  # r5 centre
)


@dataclass(frozen=True)
class RegionSet:
    """The five 200x200 windows of one cropped image."""

    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    r4: np.ndarray
    r5: np.ndarray

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.r1, self.r2, self.r3, self.r4)

    def all(self) -> tuple[np.ndarray, ...]:
        return (self.r1, self.r2, self.r3, self.r4, self.r5)


def crop_margins(img: np.ndarray) -> np.ndarray:
    """Cut 56 pixels from each side of a 512x512 image."""
    validate_image(img)
    h, w, _ = img.shape
    if (h, w) != (RAW_SIZE, RAW_SIZE):
        raise ShapeError(f"expected a {RAW_SIZE}x{RAW_SIZE} image, got {h}x{w}")
    return img[MARGIN : MARGIN + CROP_SIZE, MARGIN : MARGIN + CROP_SIZE].copy()


def split_regions(img: np.ndarray) -> RegionSet:
    """Split a 400x400 crop into the five 200x200 regions."""
    validate_image(img)
    h, w, _ = img.shape
    if (h, w) != (CROP_SIZE, CROP_SIZE):
        raise ShapeError(f"expected a {CROP_SIZE}x{CROP_SIZE} image, got {h}x{w}")
    windows = [
        img[r : r + REGION_SIZE, c : c + REGION_SIZE].copy() for r, c in REGION_OFFSETS
    ]
    return RegionSet(*windows)


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-aligned (area-consistent) sampling.

    Output pixel centres map to input coordinates via (i + 0.5) * scale - 0.5.
    Sample positions are clamped to the pixel-centre range, so the output is a
    convex combination of input pixels and constant images stay constant.
    """
    validate_image(img)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be positive, got ({out_h}, {out_w})")
    in_h, in_w, _ = img.shape
    src_y = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    src_x = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    src_y = np.clip(src_y, 0.0, in_h - 1.0)
    src_x = np.clip(src_x, 0.0, in_w - 1.0)

    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (src_y - y0)[:, None, None]
    fx = (src_x - x0)[None, :, None]

    top = img[np.ix_(y0, x0)] * (1.0 - fx) + img[np.ix_(y0, x1)] * fx
    bottom = img[np.ix_(y1, x0)] * (1.0 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bottom * fy


def vectorize_channel(img: np.ndarray, channel: int) -> np.ndarray:
    """Row-major flattening of one colour channel of a 32x32 image."""
    validate_image(img)
    h, w, c = img.shape
    if (h, w) != (FEATURE_INPUT_SIZE, FEATURE_INPUT_SIZE):
        raise ShapeError(
            f"expected a {FEATURE_INPUT_SIZE}x{FEATURE_INPUT_SIZE} image, got {h}x{w}"
        )
    if not 0 <= channel < c:
        raise IndexError(f"channel {channel} out of range for {c}-channel image")
    return img[:, :, channel].reshape(-1).copy()
