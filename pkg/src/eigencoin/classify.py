"""Nearest-neighbor coin classification over four feature extraction methods.

A fitted model holds per-item gallery features from the training split and
answers queries by minimum distance, with an optional rejection threshold.
Images already at the normalized size feed feature extraction directly; any
other size goes through coin segmentation first, in fit and predict alike.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import _blockio
from .baselines import (BdpcaModel, HarrisConfig, HarrisFeature, bdpca_features,
                        bdpca_train, harris_features, wavelet_features)
from .dataset import LabeledDataset
from .distances import (CovModel, amd, bhattacharyya, euclidean,
                        per_vector_diag, shared_spectrum)
from .errors import (DimensionError, InvalidDatasetError, InvalidParameterError,
                     ModelFormatError, PredictionFailureError,
                     SegmentationFailureError)
from .eigenspace import Manifold, build_manifold, project
from .imaging import GrayImage, PreprocessConfig, extract_roi

MODEL_FORMAT_VERSION = 1

METHODS = ("eigencoin", "bdpca", "wavelet", "harris")
DISTANCES = ("bhattacharyya", "euclidean", "amd")
COV_MODELS = ("shared_spectrum", "per_vector_diag")

DEFAULT_DISTANCES = {
    "eigencoin": ("bhattacharyya", "shared_spectrum"),
    "bdpca": ("amd", None),
    "wavelet": ("bhattacharyya", "per_vector_diag"),
    "harris": ("bhattacharyya", "per_vector_diag"),
}


@dataclass(frozen=True)
class ClassifierConfig:
    """Method, feature knobs, distance choice and rejection threshold.

    JSON form is flat: method and its parameters, then distance, cov_model,
    epsilon, amd_p, threshold ("inf" for no rejection), and a nested
    preprocess object.
    """

    method: str = "eigencoin"
    k: Optional[int] = 112
    energy: Optional[float] = None
    k_rows: int = 15
    k_cols: int = 35
    wavelet_level: int = 2
    harris: HarrisConfig = field(default_factory=HarrisConfig)
    distance: Optional[str] = None
    cov_model: Optional[str] = None
    epsilon: Optional[float] = None
    amd_p: float = 1.0
    threshold: float = math.inf
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameterError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.method == "eigencoin":
            if (self.k is None) == (self.energy is None):
                raise InvalidParameterError("eigencoin selects its basis by k or by energy, not both or neither")
        if self.distance is not None and self.distance not in DISTANCES:
            raise InvalidParameterError(f"unknown distance {self.distance!r}, expected one of {DISTANCES}")
        if self.cov_model is not None and self.cov_model not in COV_MODELS:
            raise InvalidParameterError(f"unknown cov_model {self.cov_model!r}, expected one of {COV_MODELS}")
        dist, cov = self.resolved_distance()
        if dist == "amd" and self.method != "bdpca":
            raise InvalidParameterError("assembled matrix distance applies to bdpca features only")
        if dist != "amd" and self.method == "bdpca":
            raise InvalidParameterError("bdpca features are matrices, use the amd distance")
        if dist == "bhattacharyya" and cov == "shared_spectrum" and self.method != "eigencoin":
            raise InvalidParameterError("shared_spectrum needs an eigenvalue spectrum, only eigencoin provides one")
        if self.epsilon is not None and not self.epsilon > 0.0:
            raise InvalidParameterError("epsilon must be positive")
        if not self.amd_p >= 1.0:
            raise InvalidParameterError("amd_p must be >= 1")
        if not (self.threshold >= 0.0 or math.isinf(self.threshold)):
            raise InvalidParameterError("threshold must be nonnegative or infinite")
        if self.method == "wavelet":
            size = self.preprocess.normalized_size
            if self.wavelet_level < 1 or size % (2 ** self.wavelet_level):
                raise InvalidParameterError(
                    f"wavelet_level {self.wavelet_level} does not divide the normalized size {size}")

    def resolved_distance(self) -> Tuple[str, Optional[str]]:
        """Distance and covariance model after per-method defaulting."""
        dist = self.distance or DEFAULT_DISTANCES[self.method][0]
        cov = None
        if dist == "bhattacharyya":
            cov = self.cov_model or DEFAULT_DISTANCES[self.method][1] or "per_vector_diag"
        return dist, cov

    def to_dict(self) -> dict:
        dist, cov = self.resolved_distance()
        d = {
            "method": self.method,
            "distance": dist,
            "cov_model": cov,
            "epsilon": self.epsilon,
            "amd_p": self.amd_p,
            "threshold": "inf" if math.isinf(self.threshold) else self.threshold,
            "preprocess": self.preprocess.to_dict(),
        }
        if self.method == "eigencoin":
            d["k"] = self.k
            d["energy"] = self.energy
        elif self.method == "bdpca":
            d["k_rows"] = self.k_rows
            d["k_cols"] = self.k_cols
        elif self.method == "wavelet":
            d["level"] = self.wavelet_level
        elif self.method == "harris":
            d["harris"] = self.harris.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        known = {"method", "k", "energy", "k_rows", "k_cols", "level", "harris",
                 "distance", "cov_model", "epsilon", "amd_p", "threshold", "preprocess"}
        extra = set(d) - known
        if extra:
            raise InvalidParameterError(f"unknown classifier keys: {sorted(extra)}")
        method = d.get("method", "eigencoin")
        kwargs: dict = {"method": method}
        if "k" in d or "energy" in d:
            kwargs["k"] = d.get("k")
            kwargs["energy"] = d.get("energy")
        if "k_rows" in d:
            kwargs["k_rows"] = int(d["k_rows"])
        if "k_cols" in d:
            kwargs["k_cols"] = int(d["k_cols"])
        if "level" in d:
            kwargs["wavelet_level"] = int(d["level"])
        if "harris" in d:
            kwargs["harris"] = HarrisConfig.from_dict(d["harris"])
        for key in ("distance", "cov_model", "epsilon"):
            if key in d:
                kwargs[key] = d[key]
        if "amd_p" in d:
            kwargs["amd_p"] = float(d["amd_p"])
        if "threshold" in d:
            t = d["threshold"]
            kwargs["threshold"] = math.inf if t in ("inf", None) else float(t)
        if "preprocess" in d:
            kwargs["preprocess"] = PreprocessConfig.from_dict(d["preprocess"])
        if kwargs.get("k") is not None:
            kwargs["k"] = int(kwargs["k"])
        if kwargs.get("energy") is not None:
            kwargs["energy"] = float(kwargs["energy"])
        return cls(**kwargs)


@dataclass(frozen=True)
class Prediction:
    """One classification outcome.

    label is a 1-based class id, or None when the query was rejected by the
    distance threshold (failure is None) or failed feature extraction
    (failure names the stage).
    """

    label: Optional[int]
    best_distance: float
    runner_up: Optional[float] = None
    failure: Optional[str] = None

    @property
    def rejected(self) -> bool:
        return self.label is None and self.failure is None


@dataclass(frozen=True)
class ClassifierModel:
    """Fitted gallery plus the per-method projection model."""

    config: ClassifierConfig
    class_names: Tuple[str, ...]
    gallery: np.ndarray           # (g, ...) feature array, one row per training item
    gallery_labels: np.ndarray    # (g,), values in 1..C
    manifold: Optional[Manifold] = None
    bdpca: Optional[BdpcaModel] = None
    harris_counts: Optional[np.ndarray] = None

    def __post_init__(self):
        gallery = np.array(self.gallery, dtype=np.float64, copy=True)
        labels = np.array(self.gallery_labels, dtype=np.int64, copy=True)
        if gallery.shape[0] != labels.shape[0] or gallery.shape[0] == 0:
            raise InvalidParameterError("gallery and labels must align and be non-empty")
        if labels.min() < 1 or labels.max() > len(self.class_names):
            raise InvalidParameterError("gallery labels must lie in 1..C")
        gallery.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "gallery", gallery)
        object.__setattr__(self, "gallery_labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def distance_fn(self) -> Callable[[np.ndarray, np.ndarray], float]:
        return _distance_fn(self.config, self.manifold)


def _distance_fn(cfg: ClassifierConfig, manifold: Optional[Manifold]):
    dist, cov_kind = cfg.resolved_distance()
    if dist == "euclidean":
        return lambda a, b: euclidean(a, b)
    if dist == "amd":
        p = cfg.amd_p
        return lambda a, b: amd(a, b, p=p)
    if cov_kind == "shared_spectrum":
        if manifold is None:
            raise InvalidParameterError("shared_spectrum requires a fitted eigenspace")
        cov = shared_spectrum(manifold.eigenvalues, epsilon=cfg.epsilon)
    else:
        cov = per_vector_diag(epsilon=cfg.epsilon)
    return lambda a, b: bhattacharyya(a, b, cov)


def _normalize(img: GrayImage, pre: PreprocessConfig) -> GrayImage:
    size = pre.normalized_size
    if img.shape == (size, size):
        return img
    return extract_roi(img, pre)


def _feature(cfg: ClassifierConfig, manifold: Optional[Manifold],
             bdpca_model: Optional[BdpcaModel], img: GrayImage):
    if cfg.method == "eigencoin":
        return project(manifold, img.vector())
    if cfg.method == "bdpca":
        return bdpca_features(bdpca_model, img)
    if cfg.method == "wavelet":
        return wavelet_features(img, cfg.wavelet_level).values
    feat = harris_features(img, cfg.harris)
    return feat


def fit(train: LabeledDataset, cfg: ClassifierConfig) -> ClassifierModel:
    """Fit the configured method on the training split of a dataset."""
    if train.is_train is None:
        raise InvalidDatasetError("dataset needs a train/test assignment before fitting")
    images, labels = train.train_set()
    counts = np.bincount(labels, minlength=train.n_classes + 1)[1:]
    if (counts == 0).any():
        empty = [train.class_names[i] for i in np.nonzero(counts == 0)[0]]
        raise InvalidDatasetError(f"classes without training items: {empty}")
    normalized = [_normalize(im, cfg.preprocess) for im in images]

    manifold = None
    bdpca_model = None
    harris_counts = None
    if cfg.method == "eigencoin":
        vectors = np.stack([im.vector() for im in normalized])
        manifold = build_manifold(vectors, k=cfg.k, energy=cfg.energy)
    elif cfg.method == "bdpca":
        bdpca_model = bdpca_train(normalized, cfg.k_rows, cfg.k_cols)

    feats = [_feature(cfg, manifold, bdpca_model, im) for im in normalized]
    if cfg.method == "harris":
        harris_counts = np.asarray([f.corner_count for f in feats], dtype=np.int64)
        gallery = np.stack([f.values for f in feats])
    else:
        gallery = np.stack(feats)
    return ClassifierModel(config=cfg, class_names=train.class_names,
                           gallery=gallery, gallery_labels=labels,
                           manifold=manifold, bdpca=bdpca_model,
                           harris_counts=harris_counts)


def nearest(distances: Sequence[float], labels: np.ndarray) -> Tuple[int, float, Optional[float]]:
    """Index of the minimum distance with deterministic tie-breaking.

    Ties resolve to the lowest class id, then the earliest gallery position.
    Also returns the best and second-best distances.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.shape[0] != labels.shape[0] or d.shape[0] == 0:
        raise DimensionError("distances and labels must align and be non-empty")
    best = min(range(d.shape[0]), key=lambda i: (d[i], labels[i], i))
    runner = None
    if d.shape[0] > 1:
        rest = np.delete(d, best)
        runner = float(rest.min())
    return best, float(d[best]), runner


def predict(model: ClassifierModel, img: GrayImage) -> Prediction:
    """Classify one image, rejecting when the best distance reaches the threshold."""
    try:
        norm = _normalize(img, model.config.preprocess)
        feat = _feature(model.config, model.manifold, model.bdpca, norm)
    except SegmentationFailureError as exc:
        raise PredictionFailureError(exc.stage, f"segmentation failed at {exc.stage!r}") from exc
    except (InvalidParameterError, DimensionError) as exc:
        raise PredictionFailureError("feature", str(exc)) from exc
    if model.config.method == "harris":
        feat = feat.values
    dist = model.distance_fn()
    dists = [dist(feat, g) for g in model.gallery]
    idx, best, runner = nearest(dists, model.gallery_labels)
    if best >= model.config.threshold:
        return Prediction(label=None, best_distance=best, runner_up=runner)
    return Prediction(label=int(model.gallery_labels[idx]), best_distance=best,
                      runner_up=runner)


def predict_batch(model: ClassifierModel, images: Sequence[GrayImage]) -> List[Prediction]:
    """predict over a sequence; per-item failures are recorded, not raised."""
    out = []
    for img in images:
        try:
            out.append(predict(model, img))
        except PredictionFailureError as exc:
            out.append(Prediction(label=None, best_distance=math.nan,
                                  runner_up=None, failure=exc.stage))
    return out


def save_model(model: ClassifierModel, path) -> None:
    """Write the classifier to the two-part container format."""
    cfg = model.config
    manifest = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "classifier",
        "method": cfg.method,
        "config": cfg.to_dict(),
        "class_names": list(model.class_names),
        "gallery_labels": model.gallery_labels.tolist(),
        "normalized_size": cfg.preprocess.normalized_size,
        "m": int(model.gallery.shape[0]),
    }
    blocks: List[Tuple[str, np.ndarray]] = []
    if cfg.method == "eigencoin":
        m = model.manifold
        manifest["n"] = m.n
        manifest["k"] = m.k
        manifest["total_variance"] = m.total_variance
        manifest["m_train"] = m.m_train
        blocks += [("mean", m.mean), ("basis", m.basis), ("eigenvalues", m.eigenvalues)]
    elif cfg.method == "bdpca":
        b = model.bdpca
        blocks += [("bdpca_mean", b.mean), ("w_rows", b.w_rows), ("w_cols", b.w_cols)]
    elif cfg.method == "harris":
        manifest["harris_counts"] = model.harris_counts.tolist()
    blocks.append(("gallery", model.gallery))
    _blockio.write_blocks(path, manifest, blocks)


def load_model(path) -> ClassifierModel:
    """Read a classifier written by save_model."""
    manifest, arrays = _blockio.read_blocks(path)
    if manifest.get("kind") != "classifier":
        raise ModelFormatError(f"{path}: not a classifier container")
    try:
        cfg = ClassifierConfig.from_dict(manifest["config"])
        class_names = tuple(manifest["class_names"])
        labels = np.asarray(manifest["gallery_labels"], dtype=np.int64)
        gallery = arrays["gallery"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: missing or malformed field ({exc})") from exc
    if cfg.method != manifest.get("method"):
        raise ModelFormatError(f"{path}: method fields disagree")
    manifold = None
    bdpca_model = None
    harris_counts = None
    if cfg.method == "eigencoin":
        manifold = Manifold(mean=arrays["mean"], basis=arrays["basis"],
                            eigenvalues=arrays["eigenvalues"],
                            m_train=int(manifest["m_train"]),
                            total_variance=float(manifest["total_variance"]))
    elif cfg.method == "bdpca":
        bdpca_model = BdpcaModel(mean=arrays["bdpca_mean"], w_rows=arrays["w_rows"],
                                 w_cols=arrays["w_cols"])
    elif cfg.method == "harris":
        harris_counts = np.asarray(manifest["harris_counts"], dtype=np.int64)
    return ClassifierModel(config=cfg, class_names=class_names, gallery=gallery,
                           gallery_labels=labels, manifold=manifold,
                           bdpca=bdpca_model, harris_counts=harris_counts)
