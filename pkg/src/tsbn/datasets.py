"""Labeled image datasets: manifest loading, synthetic phantoms, stratified splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import InvalidInput, InvalidManifest, InvalidSplit, IoError
from .gsim import normalize_image

DEFAULT_HEIGHT = 96
DEFAULT_WIDTH = 48
INBREAST_POSITIVE_FRACTION = 100 / 387


@dataclass(frozen=True, eq=False)
class LabeledSample:
    id: str
    image: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[LabeledSample, ...]
    name: str = "dataset"

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise InvalidInput(f"duplicate sample ids in dataset {self.name!r}")

    def __len__(self):
        return len(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def images(self) -> np.ndarray:
        """Stacked images, shape (N, H, W)."""
        return np.stack([s.image for s in self.samples])

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    def subset(self, ids: Sequence[str], name: str | None = None) -> "Dataset":
        index = {s.id: s for s in self.samples}
        return Dataset(tuple(index[i] for i in ids), name or self.name)

    def check_trainable(self):
        if len(self) < 2:
            raise InvalidInput("a training dataset needs at least 2 samples")
        n_pos = self.n_positive
        if n_pos == 0 or n_pos == len(self):
            raise InvalidInput("a training dataset needs samples of both classes")


@dataclass(frozen=True)
class FoldSplit:
    k: int
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    seed: int = 0

    def fold_of(self) -> dict[str, int]:
        """Map each sample id to the fold index in which it is tested."""
        return {i: f for f, (_, test) in enumerate(self.folds) for i in test}


@dataclass(frozen=True)
class SynthParams:
    n_samples: int = 200
    height: int = DEFAULT_HEIGHT
    width: int = DEFAULT_WIDTH
    positive_fraction: float = INBREAST_POSITIVE_FRACTION
    separability: float = 0.7
    noise_sigma: float = 0.08
    seed: int = 0
    background_level: float = 0.3
    mass_peak: float = 1.0

    def validate(self):
        if self.n_samples < 1:
            raise InvalidInput("n_samples must be >= 1")
        if self.height < 16 or self.width < 16:
            raise InvalidInput("synthetic images must be at least 16x16")
        if not 0.0 < self.positive_fraction < 1.0:
            raise InvalidInput("positive_fraction must lie strictly inside (0, 1)")
        if not 0.0 <= self.separability <= 1.0:
            raise InvalidInput("separability must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise InvalidInput("noise_sigma must be >= 0")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def resize_image(image, h: int, w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres (no antialiasing), clamped to [0, 1].

    Halving a dimension therefore averages each aligned pair of pixels.
    """
    if int(h) < 1 or int(w) < 1:
        raise InvalidInput(f"target size must be positive, got {h}x{w}")
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInput(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if arr.shape == (h, w):
        return arr.copy()
    t = torch.from_numpy(np.ascontiguousarray(arr))[None, None]
    out = F.interpolate(t, size=(int(h), int(w)), mode="bilinear", align_corners=False)
    return np.clip(out[0, 0].numpy(), 0.0, 1.0)


def read_image(path, normalization: str = "minmax") -> np.ndarray:
    """Decode a single-channel image file to float64.

    ``normalization="minmax"`` rescales each image to [0, 1];
    ``"dtype"`` divides by the integer range of the stored bit depth.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            arr = np.asarray(img)
    except FileNotFoundError as exc:
        raise IoError(f"image not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim != 2:
        raise InvalidManifest(f"{path} is not a single-channel image (mode {mode})")
    if normalization == "minmax":
        return normalize_image(arr.astype(np.float64))
    if normalization == "dtype":
        if mode in ("1", "L", "P"):
            scale = 255.0
        elif mode.startswith("I;16") or arr.dtype == np.uint16:
            scale = 65535.0
        else:
            raise InvalidInput(f"dtype normalization unsupported for image mode {mode}")
        return arr.astype(np.float64) / scale
    raise InvalidInput(f"unknown normalization {normalization!r}")


def write_png(path, image: np.ndarray):
    """Store a [0, 1] image as an 8-bit grayscale PNG (fixed encoder settings)."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    q = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path, format="PNG", optimize=False, compress_level=6)


def load_manifest(path, height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH) -> Dataset:
    """Load a CSV manifest with header ``id,path,label``.

    Paths are resolved relative to the manifest's directory. Every image is
    min-max normalized then resized to ``height`` x ``width``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise IoError(f"manifest not found: {path}") from exc
    reader = csv.DictReader(text.splitlines())
    missing = {"id", "path", "label"} - set(reader.fieldnames or [])
    if missing:
        raise InvalidManifest(f"manifest {path} lacks columns {sorted(missing)}")

    seen = set()
    samples = []
    for lineno, row in enumerate(reader, start=2):
        sid = (row["id"] or "").strip()
        if not sid:
            raise InvalidManifest(f"{path}:{lineno}: empty id")
        if sid in seen:
            raise InvalidManifest(f"{path}:{lineno}: duplicate id {sid!r}")
        seen.add(sid)
        raw_label = (row["label"] or "").strip()
        if raw_label not in ("0", "1"):
            raise InvalidManifest(f"{path}:{lineno}: label must be 0 or 1, got {raw_label!r}")
        image = read_image(path.parent / row["path"].strip())
        image = resize_image(image, height, width)
        samples.append(LabeledSample(sid, _readonly(image), int(raw_label)))
    return Dataset(tuple(samples), name=path.stem)


def write_manifest(dataset: Dataset, out_dir, image_dir: str = "images") -> Path:
    """Export ``dataset`` as PNG files plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / image_dir).mkdir(parents=True, exist_ok=True)
    lines = ["id,path,label"]
    for s in dataset.samples:
        rel = f"{image_dir}/{s.id}.png"
        write_png(out_dir / rel, s.image)
        lines.append(f"{s.id},{rel},{s.label}")
    manifest = out_dir / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _background(rng: np.random.Generator, h: int, w: int, level: float) -> np.ndarray:
    # integer spatial frequencies average to exactly zero over the grid,
    # so every background has the same mean intensity
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    bg = np.full((h, w), level)
    for _ in range(3):
        fy, fx = rng.integers(0, 3, size=2)
        if fy == 0 and fx == 0:
            fy = 1
        amp = rng.uniform(0.02, 0.05)
        phase = rng.uniform(0, 2 * np.pi)
        bg += amp * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return bg


def _mass(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    ry = h * rng.uniform(0.12, 0.18)
    rx = w * rng.uniform(0.18, 0.28)
    cy = rng.uniform(ry, h - ry)
    cx = rng.uniform(rx, w - rx)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.meshgrid(np.arange(h) + 0.5 - cy, np.arange(w) + 0.5 - cx, indexing="ij")
    c, s = np.cos(theta), np.sin(theta)
    u = (c * yy + s * xx) / ry
    v = (-s * yy + c * xx) / rx
    r2 = u * u + v * v
    return np.clip(1.0 - r2 * r2, 0.0, None)


def make_synthetic(params: SynthParams | None = None, **overrides) -> Dataset:
    """Class-correlated phantom images.

    Negatives are a smooth low-frequency background plus Gaussian noise;
    positives additionally carry a bright elliptical mass whose peak is
    ``mass_peak * separability``. The result is a pure function of ``params``.
    """
    if params is None:
        params = SynthParams(**overrides)
    elif overrides:
        params = SynthParams(**{**params.__dict__, **overrides})
    params.validate()
    rng = np.random.default_rng(params.seed)
    n = params.n_samples
    n_pos = _round_half_up(n * params.positive_fraction)
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_pos]] = 1

    h, w = params.height, params.width
    peak = params.mass_peak * params.separability
    width_digits = len(str(max(n - 1, 0)))
    samples = []
    for i in range(n):
        img = _background(rng, h, w, params.background_level)
        if labels[i]:
            img = img + peak * _mass(rng, h, w)
        img = img + rng.normal(0.0, params.noise_sigma, size=(h, w))
        img = np.clip(img, 0.0, 1.0)
        samples.append(LabeledSample(f"s{i:0{width_digits}d}", _readonly(img), int(labels[i])))
    return Dataset(tuple(samples), name=f"synthetic-seed{params.seed}")


def _class_members(dataset: Dataset, rng: np.random.Generator) -> list[list[str]]:
    ids = np.array(dataset.ids, dtype=object)
    labels = dataset.labels
    return [list(ids[labels == c][rng.permutation(int((labels == c).sum()))]) for c in (1, 0)]


def stratified_kfold(dataset: Dataset, k: int = 5, seed: int = 0) -> FoldSplit:
    """Shuffle each class with ``seed`` and deal its ids round-robin into ``k`` folds.

    The dealing position carries over from one class to the next, so total
    fold sizes also differ by at most one.
    """
    if k < 2:
        raise InvalidSplit(f"k must be >= 2, got {k}")
    labels = dataset.labels
    for c in (0, 1):
        count = int((labels == c).sum())
        if count < k:
            raise InvalidSplit(f"class {c} has {count} members, fewer than k={k}")
    rng = np.random.default_rng(seed)
    buckets: list[set[str]] = [set() for _ in range(k)]
    pos = 0
    for members in _class_members(dataset, rng):
        for sid in members:
            buckets[pos % k].add(sid)
            pos += 1
    order = dataset.ids
    folds = []
    for f in range(k):
        test = tuple(i for i in order if i in buckets[f])
        train = tuple(i for i in order if i not in buckets[f])
        folds.append((train, test))
    return FoldSplit(k=k, folds=tuple(folds), seed=seed)


def stratified_holdout(dataset: Dataset, fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Split into (train, test) keeping the class ratio; each class contributes
    ``round(fraction * n_class)`` test samples, at least one and never all."""
    if not 0.0 < fraction < 1.0:
        raise InvalidSplit(f"holdout fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    test_ids = set()
    for members in _class_members(dataset, rng):
        if len(members) < 2:
            raise InvalidSplit("each class needs at least 2 samples for a holdout split")
        n_test = min(max(_round_half_up(fraction * len(members)), 1), len(members) - 1)
        test_ids.update(members[:n_test])
    order = dataset.ids
    train = dataset.subset([i for i in order if i not in test_ids], f"{dataset.name}-train")
    test = dataset.subset([i for i in order if i in test_ids], f"{dataset.name}-test")
    return train, test
