"""Distance functions for nearest-neighbor matching of feature vectors.

Two Gaussian covariance models back the Bhattacharyya distance: a shared
diagonal spectrum (both vectors assumed drawn from the same diagonal
covariance, so the determinant term vanishes) and a per-vector diagonal
model built from each vector's own squared entries.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, InvalidParameterError

SHARED_SPECTRUM = "shared_spectrum"
PER_VECTOR_DIAG = "per_vector_diag"


@dataclass(frozen=True)
class CovModel:
    """Diagonal covariance model with a jitter term epsilon.

    epsilon defaults to 1e-6 * max(largest spectrum entry, 1); for the
    per-vector model, where no spectrum exists, that reduces to 1e-6.
    """

    kind: str
    epsilon: Optional[float] = None
    spectrum: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (SHARED_SPECTRUM, PER_VECTOR_DIAG):
            raise InvalidParameterError(f"unknown covariance model {self.kind!r}")
        if self.epsilon is not None and not self.epsilon > 0.0:
            raise InvalidParameterError("epsilon must be positive")
        if self.kind == SHARED_SPECTRUM:
            if self.spectrum is None:
                raise InvalidParameterError("shared_spectrum needs a spectrum")
            spec = np.array(self.spectrum, dtype=np.float64, copy=True)
            if spec.ndim != 1 or spec.size == 0:
                raise DimensionError("spectrum must be a non-empty 1-D array")
            if (spec < 0.0).any() or not np.isfinite(spec).all():
                raise InvalidParameterError("spectrum entries must be finite and >= 0")
            spec.flags.writeable = False
            object.__setattr__(self, "spectrum", spec)
        elif self.spectrum is not None:
            raise InvalidParameterError("per_vector_diag takes no spectrum")

    def resolved_epsilon(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        if self.kind == SHARED_SPECTRUM:
            return 1e-6 * max(float(self.spectrum.max()), 1.0)
        return 1e-6


def shared_spectrum(spectrum, epsilon: Optional[float] = None) -> CovModel:
    return CovModel(SHARED_SPECTRUM, epsilon=epsilon, spectrum=spectrum)


def per_vector_diag(epsilon: Optional[float] = None) -> CovModel:
    return CovModel(PER_VECTOR_DIAG, epsilon=epsilon)


def _pair(a, b) -> tuple:
    va = np.asarray(a, dtype=np.float64).reshape(-1)
    vb = np.asarray(b, dtype=np.float64).reshape(-1)
    if va.shape != vb.shape:
        raise DimensionError(f"vector lengths differ: {va.shape[0]} vs {vb.shape[0]}")
    if va.size == 0:
        raise InvalidParameterError("vectors must be non-empty")
    if not (np.isfinite(va).all() and np.isfinite(vb).all()):
        raise InvalidParameterError("vectors must be finite")
    return va, vb


def bhattacharyya(a, b, cov: CovModel) -> float:
    """Bhattacharyya distance between Gaussians centered at a and b.

    With the shared-spectrum model the covariances are identical, the
    log-determinant term is exactly zero, and the distance reduces to
    one-eighth of a diagonal Mahalanobis form.
    """
    va, vb = _pair(a, b)
    eps = cov.resolved_epsilon()
    d = va - vb
    if cov.kind == SHARED_SPECTRUM:
        if cov.spectrum.shape[0] != va.shape[0]:
            raise DimensionError(
                f"spectrum length {cov.spectrum.shape[0]} does not match vectors of length {va.shape[0]}")
        return float(0.125 * (d * d / (cov.spectrum + eps)).sum())
    sa = va * va + eps
    sb = vb * vb + eps
    pooled = 0.5 * (sa + sb)
    maha = 0.125 * (d * d / pooled).sum()
    logdet = 0.5 * (np.log(pooled).sum() - 0.5 * (np.log(sa).sum() + np.log(sb).sum()))
    return float(maha + logdet)


def euclidean(a, b) -> float:
    """Plain L2 distance."""
    va, vb = _pair(a, b)
    return float(np.linalg.norm(va - vb))


def amd(a: np.ndarray, b: np.ndarray, p: float = 1.0) -> float:
    """Assembled matrix distance between two equally shaped feature matrices.

    Column L2 norms of the difference are assembled with exponent p;
    p = 2 coincides with the Frobenius norm.
    """
    ma = np.asarray(a, dtype=np.float64)
    mb = np.asarray(b, dtype=np.float64)
    if ma.ndim != 2 or mb.ndim != 2:
        raise DimensionError("assembled matrix distance needs 2-D feature matrices")
    if ma.shape != mb.shape:
        raise DimensionError(f"feature shapes differ: {ma.shape} vs {mb.shape}")
    if not p >= 1.0:
        raise InvalidParameterError(f"exponent p must be >= 1, got {p}")
    if not (np.isfinite(ma).all() and np.isfinite(mb).all()):
        raise InvalidParameterError("feature matrices must be finite")
    col = np.sqrt(((ma - mb) ** 2).sum(axis=0))
    if p == 1.0:
        return float(col.sum())
    if p == 2.0:
        return float(np.sqrt((col * col).sum()))
    return float((col ** p).sum() ** (1.0 / p))
