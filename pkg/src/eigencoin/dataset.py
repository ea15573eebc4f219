"""Dataset loading, deterministic stratified splitting, and synthetic coins.

The synthetic generator renders four-element coin faces (bust ellipse, rims,
star-and-crescent marks, crown arc, legend ticks) on a dark field with
digit-like identification marks outside the coin disk, so the segmentation
pipeline has realistic work to do.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DatasetLoadError, InvalidDatasetError, InvalidParameterError
from .imaging import GrayImage, load_image, save_image

RASTER_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class LabeledDataset:
    """Images with 1-based class labels and an optional train/test assignment."""

    class_names: Tuple[str, ...]
    images: Tuple[GrayImage, ...]
    labels: np.ndarray                   # (len(images),), values in 1..C
    is_train: Optional[np.ndarray] = None

    def __post_init__(self):
        names = tuple(self.class_names)
        if not names or len(set(names)) != len(names) or any(not n for n in names):
            raise InvalidDatasetError("class names must be unique and non-empty")
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if labels.ndim != 1 or labels.shape[0] != len(self.images):
            raise InvalidDatasetError("one label per image required")
        if labels.size and (labels.min() < 1 or labels.max() > len(names)):
            raise InvalidDatasetError("labels must lie in 1..C")
        labels.flags.writeable = False
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "labels", labels)
        if self.is_train is not None:
            flags = np.array(self.is_train, dtype=bool, copy=True)
            if flags.shape != labels.shape:
                raise InvalidDatasetError("split flags must match the image count")
            flags.flags.writeable = False
            object.__setattr__(self, "is_train", flags)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        """Total image count per class, in class order."""
        return np.bincount(self.labels, minlength=self.n_classes + 1)[1:]

    def _require_split(self):
        if self.is_train is None:
            raise InvalidDatasetError("dataset has no train/test assignment yet")

    def train_indices(self) -> np.ndarray:
        self._require_split()
        return np.nonzero(self.is_train)[0]

    def test_indices(self) -> np.ndarray:
        self._require_split()
        return np.nonzero(~self.is_train)[0]

    def subset(self, indices: np.ndarray) -> Tuple[List[GrayImage], np.ndarray]:
        return [self.images[i] for i in indices], self.labels[indices]

    def train_set(self) -> Tuple[List[GrayImage], np.ndarray]:
        return self.subset(self.train_indices())

    def test_set(self) -> Tuple[List[GrayImage], np.ndarray]:
        return self.subset(self.test_indices())


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(ds: LabeledDataset, fraction: float = 0.7, seed: int = 0,
          train_counts: Optional[Dict[str, int]] = None) -> LabeledDataset:
    """Assign a stratified train/test split.

    Per class, indices are shuffled by a generator seeded from (seed, class
    index) and the first round-half-up(fraction * n) go to training, with a
    minimum of one training item. train_counts overrides the computed count
    for the named classes.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidParameterError(f"fraction must lie in (0, 1), got {fraction}")
    train_counts = dict(train_counts or {})
    unknown = set(train_counts) - set(ds.class_names)
    if unknown:
        raise InvalidDatasetError(f"train_counts name unknown classes: {sorted(unknown)}")
    flags = np.zeros(len(ds.images), dtype=bool)
    for ci, name in enumerate(ds.class_names):
        members = np.nonzero(ds.labels == ci + 1)[0]
        n = members.shape[0]
        if n == 0:
            raise InvalidDatasetError(f"class {name!r} has no images")
        if name in train_counts:
            take = int(train_counts[name])
            if not 1 <= take <= n:
                raise InvalidDatasetError(
                    f"train_count {take} for class {name!r} outside [1, {n}]")
        else:
            take = max(1, round_half_up(fraction * n))
            take = min(take, n)
        rng = np.random.default_rng([seed, ci])
        order = rng.permutation(n)
        flags[members[order[:take]]] = True
    return LabeledDataset(class_names=ds.class_names, images=ds.images,
                          labels=ds.labels, is_train=flags)


def load_manifest(path) -> dict:
    """Read and structurally validate a dataset manifest JSON file."""
    p = Path(path)
    try:
        manifest = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetLoadError(f"cannot read manifest {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetLoadError(f"manifest {p} is not valid JSON: {exc}") from exc
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: dict) -> None:
    if not isinstance(manifest, dict):
        raise InvalidDatasetError("manifest must be a JSON object")
    classes = manifest.get("classes")
    if not isinstance(classes, list) or not classes:
        raise InvalidDatasetError("manifest needs a non-empty 'classes' list")
    names = []
    for entry in classes:
        if not isinstance(entry, dict) or "name" not in entry or "dir" not in entry:
            raise InvalidDatasetError("each class entry needs 'name' and 'dir'")
        names.append(entry["name"])
        if "train_count" in entry and (not isinstance(entry["train_count"], int)
                                       or entry["train_count"] < 1):
            raise InvalidDatasetError(f"class {entry['name']!r}: train_count must be a positive integer")
    if len(set(names)) != len(names):
        raise InvalidDatasetError("duplicate class names in manifest")
    fraction = manifest.get("fraction", 0.7)
    if not isinstance(fraction, (int, float)) or not 0.0 < float(fraction) < 1.0:
        raise InvalidDatasetError("manifest fraction must lie in (0, 1)")
    if not isinstance(manifest.get("seed", 0), int):
        raise InvalidDatasetError("manifest seed must be an integer")


def load(root, manifest: dict) -> LabeledDataset:
    """Decode every class directory named by the manifest, without a split.

    Files are taken in lexicographic name order so datasets load
    reproducibly on any filesystem.
    """
    validate_manifest(manifest)
    root = Path(root)
    names = [entry["name"] for entry in manifest["classes"]]
    images: List[GrayImage] = []
    labels: List[int] = []
    for ci, entry in enumerate(manifest["classes"]):
        class_dir = root / entry["dir"]
        if not class_dir.is_dir():
            raise InvalidDatasetError(f"class directory {class_dir} does not exist")
        files = sorted(p for p in class_dir.iterdir()
                       if p.suffix.lower() in RASTER_SUFFIXES and p.is_file())
        if not files:
            raise InvalidDatasetError(f"class directory {class_dir} holds no images")
        for f in files:
            try:
                images.append(load_image(f))
            except InvalidParameterError:
                raise
            except Exception as exc:
                raise DatasetLoadError(f"cannot decode {f}: {exc}") from exc
            labels.append(ci + 1)
    return LabeledDataset(class_names=tuple(names), images=tuple(images),
                          labels=np.asarray(labels, dtype=np.int64))


def load_and_split(root, manifest: dict) -> LabeledDataset:
    """Load per the manifest and apply its fraction/seed/train_count split."""
    ds = load(root, manifest)
    overrides = {entry["name"]: entry["train_count"]
                 for entry in manifest["classes"] if "train_count" in entry}
    return split(ds, fraction=float(manifest.get("fraction", 0.7)),
                 seed=int(manifest.get("seed", 0)), train_counts=overrides)


@dataclass(frozen=True)
class SynthClassSpec:
    """Geometry of one synthetic coin type."""

    name: str
    train_count: int
    test_count: int
    bust_width: float = 0.55      # ellipse semi-axes as fractions of the coin radius
    bust_height: float = 0.75
    bust_angle: float = 0.0       # degrees
    bust_dx: float = 0.0          # bust center offset, fraction of the radius
    bust_dy: float = -0.05
    rim_count: int = 1
    mark_angle: float = 90.0      # base angle of the three star-crescent marks
    crown_span: float = 70.0      # crown arc angular span, degrees
    crown_radius: float = 0.50    # crown arc radius, fraction of the coin radius
    legend_ticks: int = 10

    def __post_init__(self):
        if not self.name:
            raise InvalidParameterError("class name must be non-empty")
        if self.train_count < 1 or self.test_count < 0:
            raise InvalidParameterError(f"class {self.name!r}: need train >= 1 and test >= 0")
        if self.rim_count not in (1, 2):
            raise InvalidParameterError(f"class {self.name!r}: rim_count must be 1 or 2")
        if self.legend_ticks < 0:
            raise InvalidParameterError(f"class {self.name!r}: legend_ticks must be >= 0")

    def to_dict(self) -> dict:
        return {
            "name": self.name, "train_count": self.train_count, "test_count": self.test_count,
            "bust_width": self.bust_width, "bust_height": self.bust_height,
            "bust_angle": self.bust_angle, "bust_dx": self.bust_dx, "bust_dy": self.bust_dy,
            "rim_count": self.rim_count, "mark_angle": self.mark_angle,
            "crown_span": self.crown_span, "crown_radius": self.crown_radius,
            "legend_ticks": self.legend_ticks,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthClassSpec":
        return cls(**d)


@dataclass(frozen=True)
class SynthConfig:
    """Deterministic synthetic dataset description."""

    classes: Tuple[SynthClassSpec, ...]
    image_size: int = 96
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not self.classes:
            raise InvalidParameterError("need at least one class spec")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise InvalidParameterError("synthetic class names must be unique")
        if self.image_size < 32:
            raise InvalidParameterError("image_size must be >= 32")
        if self.noise_sigma < 0.0:
            raise InvalidParameterError("noise_sigma must be >= 0")
        object.__setattr__(self, "classes", tuple(self.classes))

    def to_dict(self) -> dict:
        return {"image_size": self.image_size, "noise_sigma": self.noise_sigma,
                "seed": self.seed, "classes": [c.to_dict() for c in self.classes]}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {"image_size", "noise_sigma", "seed", "classes"}
        extra = set(d) - known
        if extra:
            raise InvalidParameterError(f"unknown synth keys: {sorted(extra)}")
        if "classes" not in d:
            raise InvalidParameterError("synth config needs a 'classes' list")
        classes = tuple(SynthClassSpec.from_dict(c) for c in d["classes"])
        return cls(classes=classes, image_size=int(d.get("image_size", 96)),
                   noise_sigma=float(d.get("noise_sigma", 0.02)), seed=int(d.get("seed", 0)))


def _soft_disk(dist: np.ndarray, radius: float) -> np.ndarray:
    return np.clip(radius - dist + 0.5, 0.0, 1.0)


def _soft_ring(dist: np.ndarray, radius: float, half_width: float) -> np.ndarray:
    return np.clip(half_width - np.abs(dist - radius) + 0.5, 0.0, 1.0)


def _blend(img: np.ndarray, cover: np.ndarray, value: float) -> np.ndarray:
    return img * (1.0 - cover) + value * cover


def _render_coin(spec: SynthClassSpec, size: int, noise_sigma: float,
                 rng: np.random.Generator) -> GrayImage:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size / 2.0 + rng.uniform(-1.5, 1.5)
    cx = size / 2.0 + rng.uniform(-1.5, 1.5)
    radius = 0.36 * size * (1.0 + rng.uniform(-0.02, 0.02))
    twist = math.radians(rng.uniform(-2.0, 2.0))

    img = np.full((size, size), 0.08)
    dist = np.hypot(yy - cy, xx - cx)
    disk = _soft_disk(dist, radius)
    shading = 0.55 - 0.08 * np.clip(dist / radius, 0.0, 1.0) ** 2
    img = img * (1.0 - disk) + shading * disk

    # bust ellipse
    bcy = cy + spec.bust_dy * radius
    bcx = cx + spec.bust_dx * radius
    ang = math.radians(spec.bust_angle) + twist
    ca, sa = math.cos(ang), math.sin(ang)
    xr = (xx - bcx) * ca + (yy - bcy) * sa
    yr = -(xx - bcx) * sa + (yy - bcy) * ca
    a = spec.bust_width * radius * (1.0 + rng.uniform(-0.02, 0.02))
    b = spec.bust_height * radius * (1.0 + rng.uniform(-0.02, 0.02))
    q = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
    bust = np.clip((1.0 - q) * min(a, b) + 0.5, 0.0, 1.0)
    img = _blend(img, bust, 0.82)

    # rims
    img = _blend(img, _soft_ring(dist, 0.92 * radius, 0.8), 0.95)
    if spec.rim_count == 2:
        img = _blend(img, _soft_ring(dist, 0.80 * radius, 0.6), 0.90)

    # star-and-crescent marks at three angles
    base = math.radians(spec.mark_angle) + twist
    for step in range(3):
        ang_i = base + step * 2.0 * math.pi / 3.0
        my = cy + 0.72 * radius * math.sin(ang_i)
        mx = cx + 0.72 * radius * math.cos(ang_i)
        mdist = np.hypot(yy - my, xx - mx)
        img = _blend(img, _soft_disk(mdist, 0.065 * radius), 0.92)
        sy = my + 0.10 * radius * math.sin(ang_i)
        sx = mx + 0.10 * radius * math.cos(ang_i)
        sdist = np.hypot(yy - sy, xx - sx)
        img = _blend(img, _soft_disk(sdist, 0.030 * radius), 1.0)

    # crown arc above the bust
    half = math.radians(spec.crown_span) / 2.0
    theta = np.arctan2(yy - cy, xx - cx)
    gap = np.abs(np.angle(np.exp(1j * (theta - (-math.pi / 2.0 + twist)))))
    arc_ring = _soft_ring(dist, spec.crown_radius * radius, 0.9)
    arc = arc_ring * np.clip((half - gap) * spec.crown_radius * radius + 0.5, 0.0, 1.0)
    img = _blend(img, arc, 0.95)

    # legend ticks around the border
    if spec.legend_ticks:
        tick_band = _soft_ring(dist, 0.855 * radius, 0.035 * radius)
        for t in range(spec.legend_ticks):
            ang_t = twist + 2.0 * math.pi * (t + 0.5) / spec.legend_ticks
            gap_t = np.abs(np.angle(np.exp(1j * (theta - ang_t))))
            tick = tick_band * np.clip(1.2 - gap_t * 0.855 * radius, 0.0, 1.0)
            img = _blend(img, tick, 0.78)

    # digit-like identification marks outside the coin, top-left corner
    ox = 4.0 + rng.uniform(0.0, 2.0)
    oy = 4.0 + rng.uniform(0.0, 2.0)
    for digit in range(3):
        dx0 = ox + digit * 7.0
        w_cov = np.clip(2.0 - np.abs(xx - (dx0 + 1.5)), 0.0, 1.0)
        h_cov = np.clip(3.0 - np.abs(yy - (oy + 2.5)), 0.0, 1.0)
        img = _blend(img, np.clip(w_cov * h_cov, 0.0, 1.0), 0.85)

    if noise_sigma > 0.0:
        img = img + rng.normal(0.0, noise_sigma, img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0))


def synthesize(cfg: SynthConfig) -> LabeledDataset:
    """Render the configured dataset with a train/test assignment.

    Every image draws from a generator seeded by (seed, class index, image
    index), so datasets are reproducible item by item regardless of
    generation order.
    """
    images: List[GrayImage] = []
    labels: List[int] = []
    flags: List[bool] = []
    for ci, spec in enumerate(cfg.classes):
        total = spec.train_count + spec.test_count
        for ii in range(total):
            rng = np.random.default_rng([cfg.seed, ci, ii])
            images.append(_render_coin(spec, cfg.image_size, cfg.noise_sigma, rng))
            labels.append(ci + 1)
            flags.append(ii < spec.train_count)
    return LabeledDataset(class_names=tuple(s.name for s in cfg.classes),
                          images=tuple(images),
                          labels=np.asarray(labels, dtype=np.int64),
                          is_train=np.asarray(flags, dtype=bool))


def write_dataset(ds: LabeledDataset, out_dir, fraction: float = 0.7, seed: int = 0) -> dict:
    """Write PNGs per class plus a manifest that reproduces the split counts.

    Training images sort before test images inside each class directory and
    the manifest pins train_count per class, so loading with the manifest
    recovers a split with identical per-class counts.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for ci, name in enumerate(ds.class_names):
        class_dir = out / name
        class_dir.mkdir(parents=True, exist_ok=True)
        members = np.nonzero(ds.labels == ci + 1)[0]
        if ds.is_train is not None:
            members = np.concatenate([members[ds.is_train[members]],
                                      members[~ds.is_train[members]]])
        entry: dict = {"name": name, "dir": name}
        if ds.is_train is not None:
            entry["train_count"] = int(ds.is_train[members].sum())
        for pos, idx in enumerate(members):
            save_image(ds.images[idx], class_dir / f"coin_{pos:04d}.png")
        entries.append(entry)
    manifest = {"classes": entries, "fraction": fraction, "seed": seed}
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def preset_names() -> List[str]:
    """Names of the synthetic presets shipped with the package."""
    pkg = resources.files("eigencoin") / "fixtures"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> SynthConfig:
    """Load a shipped synthetic preset by name."""
    pkg = resources.files("eigencoin") / "fixtures" / f"{name}.json"
    try:
        text = pkg.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise InvalidParameterError(
            f"unknown preset {name!r}, available: {preset_names()}") from exc
    return SynthConfig.from_dict(json.loads(text))
