"""Scoring and experiment harnesses: confusion matrices, per-class rates,
imbalance-weighted precision, and the eigenspace size sweep."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .classify import ClassifierConfig, ClassifierModel, Prediction, nearest, predict_batch
from .dataset import LabeledDataset
from .distances import bhattacharyya, euclidean, per_vector_diag, shared_spectrum
from .eigenspace import build_manifold, train_mse, truncate
from .errors import (DimensionError, InvalidParameterError, UndefinedRateError)
from .imaging import GrayImage

from . import classify as _classify


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes, 1-based ids.

    Rejected queries are tallied per true class in a separate vector and
    never appear in the prediction columns.
    """

    counts: np.ndarray    # (c, c) int64
    rejected: np.ndarray  # (c,) int64

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        rejected = np.array(self.rejected, dtype=np.int64, copy=True)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] == 0:
            raise DimensionError("confusion counts must be square and non-empty")
        if rejected.shape != (counts.shape[0],):
            raise DimensionError("rejected tallies must have one entry per class")
        if (counts < 0).any() or (rejected < 0).any():
            raise InvalidParameterError("confusion entries must be nonnegative")
        counts.flags.writeable = False
        rejected.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "rejected", rejected)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def row_totals(self) -> np.ndarray:
        """True-class item counts including rejected queries."""
        return self.counts.sum(axis=1) + self.rejected

    def total(self) -> int:
        return int(self.counts.sum() + self.rejected.sum())


def confusion(truth: Sequence[int], predictions: Sequence[Prediction],
              n_classes: int) -> ConfusionMatrix:
    """Tally predictions against true labels."""
    if n_classes < 1:
        raise InvalidParameterError("need at least one class")
    truth = np.asarray(truth, dtype=np.int64)
    if truth.ndim != 1 or truth.shape[0] != len(predictions):
        raise DimensionError("one true label per prediction required")
    if truth.size == 0:
        raise InvalidParameterError("cannot score an empty prediction set")
    if truth.min() < 1 or truth.max() > n_classes:
        raise InvalidParameterError("true labels must lie in 1..C")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    rejected = np.zeros(n_classes, dtype=np.int64)
    for t, pred in zip(truth, predictions):
        if pred.failure is not None:
            raise InvalidParameterError(
                f"prediction failed at stage {pred.failure!r} and cannot be scored")
        if pred.label is None:
            rejected[t - 1] += 1
        else:
            if not 1 <= pred.label <= n_classes:
                raise InvalidParameterError(f"predicted label {pred.label} outside 1..{n_classes}")
            counts[t - 1, pred.label - 1] += 1
    return ConfusionMatrix(counts=counts, rejected=rejected)


def per_class_rates(cm: ConfusionMatrix, rejection_aware: bool = False) -> np.ndarray:
    """Diagonal fraction per true class, as values in [0, 1].

    By default rejected queries stay in the denominator (they count as
    misses); rejection_aware drops them. An empty denominator raises
    UndefinedRateError.
    """
    row = cm.counts.sum(axis=1)
    denom = row if rejection_aware else row + cm.rejected
    if (denom == 0).any():
        bad = int(np.nonzero(denom == 0)[0][0]) + 1
        raise UndefinedRateError(f"class {bad} has no scoreable queries")
    return np.diag(cm.counts) / denom


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """Trace over all queries, rejected included."""
    return float(np.trace(cm.counts) / cm.total())


def weighted_precision(rates: Sequence[float], alphas: Sequence[float]) -> float:
    """Weighted mean of per-class rates: sum(alpha * rate) / sum(alpha)."""
    r = np.asarray(rates, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)
    if r.shape != a.shape or r.ndim != 1 or r.size == 0:
        raise DimensionError("rates and alphas must be matching non-empty vectors")
    if (a <= 0.0).any():
        raise InvalidParameterError("alphas must be positive")
    if (r < 0.0).any():
        raise InvalidParameterError("rates must be nonnegative")
    return float((a * r).sum() / a.sum())


def alphas_from_counts(counts: Sequence[int], mode: str = "rank") -> np.ndarray:
    """Imbalance weights from class sizes.

    rank mode assigns integer ranks of descending size, so the largest class
    gets 1 and the smallest gets C; equal counts share the lower rank.
    reciprocal mode returns 1 / count directly.
    """
    c = np.asarray(counts, dtype=np.int64)
    if c.ndim != 1 or c.size == 0:
        raise DimensionError("counts must be a non-empty vector")
    if (c < 1).any():
        raise InvalidParameterError("class counts must be positive")
    if mode == "rank":
        return np.asarray([1 + int((c > ci).sum()) for ci in c], dtype=np.float64)
    if mode == "reciprocal":
        return 1.0 / c.astype(np.float64)
    raise InvalidParameterError(f"unknown alpha mode {mode!r}")


@dataclass(frozen=True)
class EvalReport:
    """Scores of one model over one test split."""

    confusion_matrix: ConfusionMatrix
    rates: np.ndarray
    overall: float
    weighted: float
    alphas: np.ndarray
    rejection_aware: bool

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion_matrix.counts.tolist(),
            "rejected": self.confusion_matrix.rejected.tolist(),
            "per_class_rates": self.rates.tolist(),
            "overall_accuracy": self.overall,
            "weighted_precision": self.weighted,
            "alphas": self.alphas.tolist(),
            "rejection_aware": self.rejection_aware,
        }


def evaluate(model: ClassifierModel, images: Sequence[GrayImage],
             truth: Sequence[int], class_counts: Optional[Sequence[int]] = None,
             alpha_mode: str = "rank", rejection_aware: bool = False) -> EvalReport:
    """Score a model on labeled images.

    Weights come from class_counts (typically the full dataset's per-class
    sizes); when omitted, the test split's own label counts are used.
    """
    preds = predict_batch(model, images)
    cm = confusion(truth, preds, model.n_classes)
    rates = per_class_rates(cm, rejection_aware=rejection_aware)
    if class_counts is None:
        class_counts = cm.row_totals()
    alphas = alphas_from_counts(class_counts, mode=alpha_mode)
    return EvalReport(confusion_matrix=cm, rates=rates,
                      overall=overall_accuracy(cm),
                      weighted=weighted_precision(rates, alphas),
                      alphas=alphas, rejection_aware=rejection_aware)


@dataclass(frozen=True)
class SweepRow:
    """One eigenspace size evaluated over the test split."""

    k: int
    overall: float
    rates: Tuple[float, ...]
    weighted: float
    mse_train: float


def sweep(ds: LabeledDataset, k_values: Sequence[int],
          cfg: Optional[ClassifierConfig] = None,
          alpha_mode: str = "rank") -> List[SweepRow]:
    """Evaluate the eigenspace method across basis sizes.

    One manifold is built at the largest requested size and truncated per
    row, exploiting the prefix property of the ordered eigenbasis. Rows come
    back sorted by k.
    """
    ks = sorted(set(int(k) for k in k_values))
    if not ks:
        raise InvalidParameterError("need at least one basis size")
    if ks[0] < 1:
        raise InvalidParameterError("basis sizes must be >= 1")
    if cfg is None:
        cfg = ClassifierConfig(method="eigencoin", k=ks[-1])
    elif cfg.method != "eigencoin":
        raise InvalidParameterError("the size sweep applies to the eigencoin method")
    else:
        cfg = ClassifierConfig(**{**_cfg_kwargs(cfg), "k": ks[-1], "energy": None})

    train_images, train_labels = ds.train_set()
    test_images, test_labels = ds.test_set()
    if len(test_images) == 0:
        raise InvalidParameterError("the sweep needs a non-empty test split")
    norm_train = [_classify._normalize(im, cfg.preprocess) for im in train_images]
    norm_test = [_classify._normalize(im, cfg.preprocess) for im in test_images]
    train_vecs = np.stack([im.vector() for im in norm_train])
    full = build_manifold(train_vecs, k=ks[-1])
    gallery_full = np.stack([full.basis @ (v - full.mean) for v in train_vecs])
    test_full = np.stack([full.basis @ (im.vector() - full.mean) for im in norm_test])

    alphas = alphas_from_counts(ds.class_counts(), mode=alpha_mode)
    dist_name, cov_kind = cfg.resolved_distance()
    rows = []
    for k in ks:
        sub = truncate(full, k)
        if dist_name == "euclidean":
            dist = euclidean
        elif cov_kind == "per_vector_diag":
            cov = per_vector_diag(epsilon=cfg.epsilon)
            dist = lambda a, b, c=cov: bhattacharyya(a, b, c)
        else:
            cov = shared_spectrum(sub.eigenvalues, epsilon=cfg.epsilon)
            dist = lambda a, b, c=cov: bhattacharyya(a, b, c)
        preds = []
        for t in test_full[:, :k]:
            dvals = [dist(t, g) for g in gallery_full[:, :k]]
            idx, best, runner = nearest(dvals, train_labels)
            label = None if best >= cfg.threshold else int(train_labels[idx])
            preds.append(Prediction(label=label, best_distance=best, runner_up=runner))
        cm = confusion(test_labels, preds, ds.n_classes)
        rates = per_class_rates(cm)
        rows.append(SweepRow(k=k, overall=overall_accuracy(cm),
                             rates=tuple(float(r) for r in rates),
                             weighted=weighted_precision(rates, alphas),
                             mse_train=train_mse(sub, train_vecs)))
    return rows


def _cfg_kwargs(cfg: ClassifierConfig) -> dict:
    return {
        "method": cfg.method, "k": cfg.k, "energy": cfg.energy,
        "k_rows": cfg.k_rows, "k_cols": cfg.k_cols,
        "wavelet_level": cfg.wavelet_level, "harris": cfg.harris,
        "distance": cfg.distance, "cov_model": cfg.cov_model,
        "epsilon": cfg.epsilon, "amd_p": cfg.amd_p,
        "threshold": cfg.threshold, "preprocess": cfg.preprocess,
    }
