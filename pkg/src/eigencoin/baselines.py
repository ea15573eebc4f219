"""Baseline feature extractors: bidirectional 2-D PCA, Haar wavelet-packet
statistics, and Harris corner intensities."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DimensionError, InvalidParameterError
from .imaging import SOBEL_X, SOBEL_Y, GrayImage


def _stack(images: Sequence[GrayImage]) -> np.ndarray:
    if len(images) == 0:
        raise InvalidParameterError("need at least one image")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise DimensionError("images must share one size")
    return np.stack([im.pixels for im in images])


def _descending_eigh(mat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition, descending order, deterministic signs."""
    vals, vecs = np.linalg.eigh(mat)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        peak = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[peak, j] < 0.0:
            vecs[:, j] = -vecs[:, j]
    return vals, vecs


@dataclass(frozen=True)
class BdpcaModel:
    """Row and column projection bases around the mean image."""

    mean: np.ndarray   # (h, w)
    w_rows: np.ndarray  # (h, k_r), orthonormal columns
    w_cols: np.ndarray  # (w, k_c), orthonormal columns

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64, copy=True)
        wr = np.array(self.w_rows, dtype=np.float64, copy=True)
        wc = np.array(self.w_cols, dtype=np.float64, copy=True)
        if mean.ndim != 2:
            raise DimensionError("mean must be 2-D")
        if wr.ndim != 2 or wr.shape[0] != mean.shape[0]:
            raise DimensionError("row basis must be (h, k_r)")
        if wc.ndim != 2 or wc.shape[0] != mean.shape[1]:
            raise DimensionError("column basis must be (w, k_c)")
        for arr in (mean, wr, wc):
            arr.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "w_rows", wr)
        object.__setattr__(self, "w_cols", wc)

    @property
    def k_rows(self) -> int:
        return self.w_rows.shape[1]

    @property
    def k_cols(self) -> int:
        return self.w_cols.shape[1]


def bdpca_train(images: Sequence[GrayImage], k_rows: int, k_cols: int) -> BdpcaModel:
    """Fit row and column scatter eigenbases on a stack of same-size images.

    The row scatter averages (X - mean)(X - mean)^T over images and pixels
    per row, the column scatter the transposed product; both are normalized
    by image count times the opposite dimension.
    """
    stack = _stack(images)
    m, h, w = stack.shape
    if m < 2:
        raise InvalidParameterError("need at least two training images")
    if not 1 <= k_rows <= h:
        raise InvalidParameterError(f"k_rows {k_rows} outside [1, {h}]")
    if not 1 <= k_cols <= w:
        raise InvalidParameterError(f"k_cols {k_cols} outside [1, {w}]")
    mean = stack.mean(axis=0)
    dev = stack - mean
    s_rows = np.einsum("mij,mkj->ik", dev, dev) / (m * w)
    s_cols = np.einsum("mij,mik->jk", dev, dev) / (m * h)
    _, vec_r = _descending_eigh(s_rows)
    _, vec_c = _descending_eigh(s_cols)
    return BdpcaModel(mean=mean, w_rows=vec_r[:, :k_rows], w_cols=vec_c[:, :k_cols])


def bdpca_features(model: BdpcaModel, img: GrayImage) -> np.ndarray:
    """Project a centered image into the row/column bases: W_r^T (X - mean) W_c."""
    if img.shape != model.mean.shape:
        raise DimensionError(f"image shape {img.shape} does not match model {model.mean.shape}")
    return model.w_rows.T @ (img.pixels - model.mean) @ model.w_cols


def haar_packet(pixels: np.ndarray, level: int) -> List[np.ndarray]:
    """Full wavelet-packet decomposition with the orthonormal Haar filter.

    Every subband is split again at each level, producing 4**level subbands
    ordered by their LL/LH/HL/HH path (the all-lowpass approximation first).
    The transform is orthonormal, so total energy is conserved.
    """
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError("wavelet input must be 2-D")
    if level < 1:
        raise InvalidParameterError(f"level must be >= 1, got {level}")
    h, w = arr.shape
    factor = 2 ** level
    if h % factor or w % factor:
        raise InvalidParameterError(
            f"image size {h}x{w} is not divisible by 2**level = {factor}")
    bands = [arr]
    for _ in range(level):
        split: List[np.ndarray] = []
        for band in bands:
            a = band[0::2, 0::2]
            b = band[0::2, 1::2]
            c = band[1::2, 0::2]
            d = band[1::2, 1::2]
            split.extend(((a + b + c + d) / 2.0,   # low vertical, low horizontal
                          (a - b + c - d) / 2.0,   # low vertical, high horizontal
                          (a + b - c - d) / 2.0,   # high vertical, low horizontal
                          (a - b - c + d) / 2.0))  # high both
        bands = split
    return bands


@dataclass(frozen=True)
class WaveletFeature:
    """Mean of the approximation subband plus every subband's population std."""

    level: int
    values: np.ndarray  # (4**level + 1,)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 1 or vals.shape[0] != 4 ** self.level + 1:
            raise DimensionError(f"expected {4 ** self.level + 1} values for level {self.level}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def wavelet_features(img: GrayImage, level: int) -> WaveletFeature:
    """Feature vector [mean(approx), std(approx), std(detail subbands...)]."""
    bands = haar_packet(img.pixels, level)
    approx = bands[0]
    values = np.empty(len(bands) + 1)
    values[0] = approx.mean()
    values[1] = approx.std()
    for i, band in enumerate(bands[1:], start=2):
        values[i] = band.std()
    return WaveletFeature(level=level, values=values)


@dataclass(frozen=True)
class HarrisConfig:
    """Corner detector knobs."""

    k: float = 0.04
    window_radius: int = 2
    threshold_fraction: float = 0.01
    top_count: int = 128

    def __post_init__(self):
        if not 0.0 < self.k < 0.25:
            raise InvalidParameterError(f"k must lie in (0, 0.25), got {self.k}")
        if self.window_radius < 1:
            raise InvalidParameterError("window_radius must be >= 1")
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise InvalidParameterError("threshold_fraction must lie in (0, 1]")
        if self.top_count < 1:
            raise InvalidParameterError("top_count must be >= 1")

    def to_dict(self) -> dict:
        return {"k": self.k, "window_radius": self.window_radius,
                "threshold_fraction": self.threshold_fraction, "top_count": self.top_count}

    @classmethod
    def from_dict(cls, d: dict) -> "HarrisConfig":
        known = {"k", "window_radius", "threshold_fraction", "top_count"}
        extra = set(d) - known
        if extra:
            raise InvalidParameterError(f"unknown harris keys: {sorted(extra)}")
        merged = {**cls().to_dict(), **d}
        return cls(k=float(merged["k"]), window_radius=int(merged["window_radius"]),
                   threshold_fraction=float(merged["threshold_fraction"]),
                   top_count=int(merged["top_count"]))


def _gaussian_kernel(radius: int) -> np.ndarray:
    # sigma tied to the radius so the default radius 2 gives sigma 1
    sigma = radius / 2.0
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _window_smooth(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(field, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kernel, axis=1, mode="reflect")


def harris_corners(img: GrayImage, cfg: HarrisConfig = HarrisConfig()) -> List[Tuple[int, int, float, float]]:
    """Detect corners: Gaussian-windowed structure tensor of Sobel gradients.

    Response R = det - k * trace^2 is kept where it exceeds
    threshold_fraction of the image maximum and survives 3x3 non-maximum
    suppression (response plateaus keep only their first point in
    descending-response, then row, then column order). Returns
    (row, col, response, intensity) tuples in that same order.
    """
    px = img.pixels
    gx = ndimage.correlate(px, SOBEL_X, mode="reflect")
    gy = ndimage.correlate(px, SOBEL_Y, mode="reflect")
    kern = _gaussian_kernel(cfg.window_radius)
    sxx = _window_smooth(gx * gx, kern)
    syy = _window_smooth(gy * gy, kern)
    sxy = _window_smooth(gx * gy, kern)
    response = sxx * syy - sxy * sxy - cfg.k * (sxx + syy) ** 2
    peak = response.max()
    if not peak > 0.0:
        return []
    cut = cfg.threshold_fraction * peak
    local_max = response == ndimage.maximum_filter(response, size=3, mode="constant", cval=-np.inf)
    rows, cols = np.nonzero(local_max & (response > cut))
    cand = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: (-response[rc], rc[0], rc[1]))
    taken = set()
    corners = []
    for r, c in cand:
        if any((r + dr, c + dc) in taken for dr in (-1, 0, 1) for dc in (-1, 0, 1)):
            continue
        taken.add((r, c))
        corners.append((r, c, float(response[r, c]), float(px[r, c])))
    return corners


@dataclass(frozen=True)
class HarrisFeature:
    """Zero-padded intensities of the strongest corners plus the true count."""

    values: np.ndarray  # (top_count,)
    corner_count: int

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 1 or vals.size == 0:
            raise DimensionError("harris feature values must be a non-empty 1-D array")
        if self.corner_count < 0:
            raise InvalidParameterError("corner_count must be >= 0")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def harris_features(img: GrayImage, cfg: HarrisConfig = HarrisConfig()) -> HarrisFeature:
    """Intensities of the top corners, zero padded to cfg.top_count entries."""
    corners = harris_corners(img, cfg)
    values = np.zeros(cfg.top_count)
    for i, (_, _, _, intensity) in enumerate(corners[:cfg.top_count]):
        values[i] = intensity
    return HarrisFeature(values=values, corner_count=len(corners))
