"""Coin segmentation and raster preprocessing.

The segmentation pipeline isolates the coin from background and off-coin
identification marks: Sobel gradient magnitude, binary thresholding, line
dilation, hole filling, connected component analysis, then a masked crop of
the largest component resized to a fixed square.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionError, InvalidParameterError, SegmentationFailureError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GrayImage:
    """2-D grayscale raster with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.size == 0:
            raise InvalidParameterError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if not ((px >= 0.0) & (px <= 1.0)).all():
            raise InvalidParameterError("pixel intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def vector(self) -> np.ndarray:
        """Row-major flattening of the raster."""
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class BinaryMask:
    """2-D boolean foreground mask."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, copy=True)
        if b.dtype != np.bool_:
            raise InvalidParameterError("mask bits must be boolean")
        if b.ndim != 2 or b.size == 0:
            raise InvalidParameterError(f"mask must be a non-empty 2-D array, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class StructuringElement:
    """Centered line element for dilation, odd length >= 1."""

    orientation: str
    length: int

    def __post_init__(self):
        if self.orientation not in ("vertical", "horizontal"):
            raise InvalidParameterError(f"unknown orientation {self.orientation!r}")
        if self.length < 1 or self.length % 2 == 0:
            raise InvalidParameterError("structuring element length must be odd and >= 1")

    @classmethod
    def vertical(cls, length: int) -> "StructuringElement":
        return cls("vertical", length)

    @classmethod
    def horizontal(cls, length: int) -> "StructuringElement":
        return cls("horizontal", length)

    def footprint(self) -> np.ndarray:
        if self.orientation == "vertical":
            return np.ones((self.length, 1), dtype=bool)
        return np.ones((1, self.length), dtype=bool)


@dataclass(frozen=True)
class Component:
    """One 8-connected foreground component."""

    label: int
    pixels: np.ndarray          # (area, 2) row/col coordinates, row-major order
    area: int
    bbox: Tuple[int, int, int, int]  # (row_min, col_min, row_max, col_max), inclusive

    def __post_init__(self):
        object.__setattr__(self, "pixels", _frozen(np.array(self.pixels, dtype=np.int64, copy=True)))


@dataclass(frozen=True)
class PreprocessConfig:
    """Knobs for the segmentation pipeline."""

    sobel_threshold: float = 0.2
    se_length: int = 3
    normalized_size: int = 64

    def __post_init__(self):
        if not 0.0 <= self.sobel_threshold <= 1.0:
            raise InvalidParameterError("sobel_threshold must lie in [0, 1]")
        if self.se_length < 1 or self.se_length % 2 == 0:
            raise InvalidParameterError("se_length must be odd and >= 1")
        if self.normalized_size < 1:
            raise InvalidParameterError("normalized_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "sobel_threshold": self.sobel_threshold,
            "se_length": self.se_length,
            "normalized_size": self.normalized_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        known = {"sobel_threshold", "se_length", "normalized_size"}
        extra = set(d) - known
        if extra:
            raise InvalidParameterError(f"unknown preprocess keys: {sorted(extra)}")
        merged = {**cls().to_dict(), **d}
        return cls(sobel_threshold=float(merged["sobel_threshold"]),
                   se_length=int(merged["se_length"]),
                   normalized_size=int(merged["normalized_size"]))


def sobel_magnitude(img: GrayImage) -> GrayImage:
    """Gradient magnitude from 3x3 Sobel kernels, rescaled so the max is 1.

    Borders use symmetric padding, so a constant image maps to all zeros.
    """
    # separable form: smoothing keeps constant regions exactly constant, so
    # the central difference vanishes exactly there (no residue to rescale)
    smooth = np.array([1.0, 2.0, 1.0])
    diff = np.array([-1.0, 0.0, 1.0])
    gx = ndimage.correlate1d(
        ndimage.correlate1d(img.pixels, smooth, axis=0, mode="reflect"),
        diff, axis=1, mode="reflect")
    gy = ndimage.correlate1d(
        ndimage.correlate1d(img.pixels, smooth, axis=1, mode="reflect"),
        diff, axis=0, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0.0:
        mag = mag / peak
    return GrayImage(mag)


def threshold(img: GrayImage, t: float) -> BinaryMask:
    """Strict binarization: a pixel is foreground iff its value exceeds t."""
    if not 0.0 <= t <= 1.0:
        raise InvalidParameterError(f"threshold must lie in [0, 1], got {t}")
    return BinaryMask(img.pixels > t)


def dilate(mask: BinaryMask, se: StructuringElement) -> BinaryMask:
    """Binary dilation with a centered line element; out-of-bounds is background."""
    out = ndimage.binary_dilation(mask.bits, structure=se.footprint())
    return BinaryMask(out)


def fill_holes(mask: BinaryMask) -> BinaryMask:
    """Fill background regions not 4-connected to the border."""
    return BinaryMask(ndimage.binary_fill_holes(mask.bits))


def connected_components(mask: BinaryMask) -> List[Component]:
    """8-connected components, labeled densely from 1 in raster-scan order."""
    labels, n = ndimage.label(mask.bits, structure=EIGHT_CONNECTED)
    comps = []
    for lab in range(1, n + 1):
        coords = np.argwhere(labels == lab)
        rows, cols = coords[:, 0], coords[:, 1]
        comps.append(Component(
            label=lab,
            pixels=coords,
            area=int(coords.shape[0]),
            bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
        ))
    return comps


def resize_bilinear(img: GrayImage, height: int, width: int) -> GrayImage:
    """Bilinear resample with the half-pixel-center convention.

    Resizing to the source size reproduces the input exactly.
    """
    if height < 1 or width < 1:
        raise InvalidParameterError("target size must be >= 1 in both dimensions")
    src = img.pixels
    h, w = src.shape
    if (h, w) == (height, width):
        return GrayImage(src)
    rows = (np.arange(height) + 0.5) * (h / height) - 0.5
    cols = (np.arange(width) + 0.5) * (w / width) - 0.5
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = src[np.ix_(r0, c0)] * (1.0 - fc) + src[np.ix_(r0, c1)] * fc
    bot = src[np.ix_(r1, c0)] * (1.0 - fc) + src[np.ix_(r1, c1)] * fc
    out = top * (1.0 - fr) + bot * fr
    return GrayImage(np.clip(out, 0.0, 1.0))


def extract_roi(img: GrayImage, cfg: PreprocessConfig = PreprocessConfig()) -> GrayImage:
    """Segment the dominant object and return it masked, cropped and resized.

    Stages: Sobel magnitude, strict threshold, vertical then horizontal line
    dilation, hole filling, 8-connected components, largest-area component
    (lowest label on ties), masked bounding-box crop, bilinear resize to the
    normalized square.

    Raises SegmentationFailureError naming the stage when no foreground
    survives.
    """
    grad = sobel_magnitude(img)
    mask = threshold(grad, cfg.sobel_threshold)
    if not mask.bits.any():
        raise SegmentationFailureError("threshold", "no pixel exceeded the gradient threshold")
    mask = dilate(mask, StructuringElement.vertical(cfg.se_length))
    mask = dilate(mask, StructuringElement.horizontal(cfg.se_length))
    mask = fill_holes(mask)
    comps = connected_components(mask)
    if not comps:
        raise SegmentationFailureError("connected_components", "no foreground component found")
    best = max(comps, key=lambda c: c.area)
    keep = np.zeros(mask.shape, dtype=bool)
    keep[best.pixels[:, 0], best.pixels[:, 1]] = True
    masked = np.where(keep, img.pixels, 0.0)
    r0, c0, r1, c1 = best.bbox
    crop = GrayImage(masked[r0:r1 + 1, c0:c1 + 1])
    return resize_bilinear(crop, cfg.normalized_size, cfg.normalized_size)


def from_array(arr: np.ndarray) -> GrayImage:
    """Build a GrayImage from a 2-D luminance array or an RGB(A) color array."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[2] not in (3, 4):
            raise DimensionError(f"color arrays need 3 or 4 channels, got {a.shape[2]}")
        w = np.asarray(LUMA_WEIGHTS)
        a = a[:, :, :3] @ w
    return GrayImage(np.clip(a, 0.0, 1.0))


def load_image(path) -> GrayImage:
    """Decode a raster file to a unit-range grayscale image."""
    with Image.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif im.mode in ("I", "I;16"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            arr = rgb @ np.asarray(LUMA_WEIGHTS)
    return GrayImage(np.clip(arr, 0.0, 1.0))


def save_image(img: GrayImage, path) -> None:
    """Encode as an 8-bit grayscale PNG (or whatever the suffix implies)."""
    data = np.rint(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(Path(path))
