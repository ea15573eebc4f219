"""Eigenspace construction over vectorized coin images.

The covariance eigenproblem is solved through the Gram matrix of the centered
training vectors (M x M instead of N x N), then eigenvectors are lifted back
to image space and normalized. Eigenpairs are ordered by descending
eigenvalue and each basis vector's largest-magnitude entry is made positive
so results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _blockio
from .errors import DimensionError, InvalidParameterError, ModelFormatError

RANK_RTOL = 1e-12  # eigenvalues below RANK_RTOL * largest do not count toward rank

MANIFOLD_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Manifold:
    """Trained eigenspace: mean vector, orthonormal basis rows, spectrum."""

    mean: np.ndarray          # (n,)
    basis: np.ndarray         # (k, n), rows orthonormal, descending eigenvalue order
    eigenvalues: np.ndarray   # (k,), nonincreasing, >= 0
    m_train: int
    total_variance: float     # sum of the full nonzero spectrum

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64, copy=True)
        basis = np.array(self.basis, dtype=np.float64, copy=True)
        vals = np.array(self.eigenvalues, dtype=np.float64, copy=True)
        if mean.ndim != 1:
            raise DimensionError("mean must be 1-D")
        if basis.ndim != 2 or basis.shape[1] != mean.shape[0]:
            raise DimensionError("basis must be (k, n) with n matching the mean")
        if vals.ndim != 1 or vals.shape[0] != basis.shape[0]:
            raise DimensionError("eigenvalues must match the basis row count")
        if self.m_train < 2:
            raise InvalidParameterError("a manifold needs at least two training vectors")
        if basis.shape[0] > min(self.m_train - 1, mean.shape[0]):
            raise InvalidParameterError("basis size exceeds min(m_train - 1, n)")
        if (vals < 0.0).any() or (np.diff(vals) > 0.0).any():
            raise InvalidParameterError("eigenvalues must be nonnegative and nonincreasing")
        for arr in (mean, basis, vals):
            arr.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "eigenvalues", vals)

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    def energy_captured(self) -> float:
        """Fraction of total scatter carried by the retained eigenvalues."""
        if self.total_variance <= 0.0:
            return 0.0
        return float(self.eigenvalues.sum() / self.total_variance)


def as_matrix(vectors) -> np.ndarray:
    """Stack input vectors into a (m, n) float64 matrix."""
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        mat = np.asarray(vectors, dtype=np.float64)
    else:
        rows = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
        if not rows:
            raise InvalidParameterError("need at least one vector")
        n = rows[0].shape[0]
        if any(r.shape[0] != n for r in rows):
            raise DimensionError("vectors must share one length")
        mat = np.stack(rows)
    if mat.size == 0:
        raise InvalidParameterError("vectors must be non-empty")
    if not np.isfinite(mat).all():
        raise InvalidParameterError("vectors must be finite")
    return mat


def mean_image(vectors) -> np.ndarray:
    """Arithmetic mean of the training vectors."""
    return as_matrix(vectors).mean(axis=0)


def build_manifold(vectors, k: Optional[int] = None,
                   energy: Optional[float] = None) -> Manifold:
    """Fit an eigenspace by count (k) or by cumulative energy fraction.

    Exactly one of k and energy must be given. k must satisfy
    1 <= k <= min(m - 1, n) and must not exceed the numerical rank of the
    centered training scatter; there is no silent truncation.
    """
    if (k is None) == (energy is None):
        raise InvalidParameterError("choose the basis size by count or by energy, not both or neither")
    x = as_matrix(vectors)
    m, n = x.shape
    if m < 2:
        raise InvalidParameterError("need at least two training vectors")
    mean = x.mean(axis=0)
    centered = x - mean
    scaled = centered / np.sqrt(m)
    gram = scaled @ scaled.T
    vals, vecs = np.linalg.eigh(gram)
    order = np.argsort(-vals, kind="stable")
    vals = np.maximum(vals[order], 0.0)
    vecs = vecs[:, order]

    r_max = min(m - 1, n)
    vals = vals[:r_max]
    vecs = vecs[:, :r_max]
    if vals[0] <= 0.0:
        raise InvalidParameterError("training scatter is zero, all vectors are identical")
    rank = int(np.count_nonzero(vals > RANK_RTOL * vals[0]))
    total = float(np.cumsum(vals[:rank])[-1])

    if k is not None:
        if k < 1 or k > m - 1:
            raise InvalidParameterError(f"basis size {k} outside [1, m - 1] = [1, {m - 1}]")
        if k > rank:
            raise InvalidParameterError(f"basis size {k} exceeds the training scatter rank {rank}")
        kk = int(k)
    else:
        if not 0.0 < energy <= 1.0:
            raise InvalidParameterError(f"energy fraction must lie in (0, 1], got {energy}")
        cum = np.cumsum(vals[:rank])
        kk = int(np.searchsorted(cum, energy * total, side="left")) + 1
        kk = min(kk, rank)

    lifted = centered.T @ (vecs[:, :kk] / np.sqrt(m))
    norms = np.linalg.norm(lifted, axis=0)
    basis = (lifted / norms).T
    for j in range(kk):
        peak = int(np.argmax(np.abs(basis[j])))
        if basis[j, peak] < 0.0:
            basis[j] = -basis[j]
    return Manifold(mean=mean, basis=basis, eigenvalues=vals[:kk],
                    m_train=m, total_variance=total)


def project(m: Manifold, x: np.ndarray) -> np.ndarray:
    """Coefficients of x in the eigenbasis after mean subtraction."""
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.shape[0] != m.n:
        raise DimensionError(f"vector length {v.shape[0]} does not match manifold dimension {m.n}")
    return m.basis @ (v - m.mean)


def reconstruct(m: Manifold, coefficients: np.ndarray) -> np.ndarray:
    """Mean plus the basis combination given by the coefficients."""
    w = np.asarray(coefficients, dtype=np.float64).reshape(-1)
    if w.shape[0] != m.k:
        raise DimensionError(f"coefficient length {w.shape[0]} does not match basis size {m.k}")
    return m.mean + w @ m.basis


def truncate(m: Manifold, k: int) -> Manifold:
    """Prefix sub-manifold over the leading k eigenpairs (k = 0 allowed)."""
    if k < 0 or k > m.k:
        raise InvalidParameterError(f"truncation size {k} outside [0, {m.k}]")
    return Manifold(mean=m.mean, basis=m.basis[:k], eigenvalues=m.eigenvalues[:k],
                    m_train=m.m_train, total_variance=m.total_variance)


def train_mse(m: Manifold, vectors) -> float:
    """Normalized reconstruction error of a vector set against the manifold.

    Sum of squared residuals after rank-k reconstruction divided by the sum
    of squared deviations from the manifold mean. 1.0 for an empty basis,
    0.0 at full rank, and 0.0 by convention when the denominator vanishes.
    """
    x = as_matrix(vectors)
    if x.shape[1] != m.n:
        raise DimensionError(f"vector length {x.shape[1]} does not match manifold dimension {m.n}")
    centered = x - m.mean
    denom = float((centered ** 2).sum())
    if denom == 0.0:
        return 0.0
    coeffs = centered @ m.basis.T
    resid = centered - coeffs @ m.basis
    return float((resid ** 2).sum() / denom)


def save_manifold(m: Manifold, path, extra_manifest: Optional[dict] = None) -> None:
    """Write the manifold to the two-part container format."""
    manifest = {
        "format_version": MANIFOLD_FORMAT_VERSION,
        "kind": "manifold",
        "n": m.n,
        "m": m.m_train,
        "k": m.k,
        "total_variance": m.total_variance,
    }
    if extra_manifest:
        overlap = set(extra_manifest) & set(manifest)
        if overlap:
            raise InvalidParameterError(f"extra manifest keys collide: {sorted(overlap)}")
        manifest.update(extra_manifest)
    _blockio.write_blocks(path, manifest, [
        ("mean", m.mean),
        ("basis", m.basis),
        ("eigenvalues", m.eigenvalues),
    ])


def load_manifold(path) -> Manifold:
    """Read a manifold written by save_manifold."""
    manifest, arrays = _blockio.read_blocks(path)
    if manifest.get("kind") != "manifold":
        raise ModelFormatError(f"{path}: not a manifold container")
    try:
        m = Manifold(mean=arrays["mean"], basis=arrays["basis"],
                     eigenvalues=arrays["eigenvalues"], m_train=int(manifest["m"]),
                     total_variance=float(manifest["total_variance"]))
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing field {exc}") from exc
    if m.n != int(manifest["n"]) or m.k != int(manifest["k"]):
        raise ModelFormatError(f"{path}: manifest dimensions disagree with blocks")
    return m
