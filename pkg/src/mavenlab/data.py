"""Dataset ingestion and the semi-supervised masking pipeline.

Images live in (N, H, W, C) float32 arrays scaled to [-1, 1]; labels are
1-based class indices. Benchmark loaders read local files only; downloads
live in the CLI layer.
"""

from __future__ import annotations

import logging
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class DatasetSplit:
    images: np.ndarray           # (N, H, W, C) in [-1, 1]
    labels: np.ndarray           # (N,) int, 1-based
    split: str                   # train | test
    class_names: list[str]

    def __post_init__(self):
        if self.images.shape[0] == 0:
            raise ValueError("empty dataset")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on N")
        n = len(self.class_names)
        if (self.labels < 1).any() or (self.labels > n).any():
            raise ValueError(f"labels must lie in 1..{n}")
        if not np.isfinite(self.images).all():
            raise ValueError("non-finite image data")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


@dataclass
class SemiSupervisedView:
    split: DatasetSplit
    labeled_mask: np.ndarray  # (N,) bool
    labeled_fraction: float
    seed: int

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_mask.sum())


def _to_unit_range(pixels: np.ndarray) -> np.ndarray:
    # affine map of the 8-bit grid: 0 -> -1, 255 -> +1
    return (pixels.astype(np.float32) / 127.5) - 1.0


def load_image_folder(root, image_size: int, channels: int,
                      split: str = "train") -> DatasetSplit:
    """Loads root/<class_name>/<file> with lexicographic class and file order."""
    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"{root}: no class subdirectories")
    images, labels, class_names = [], [], []
    for idx, cdir in enumerate(class_dirs, start=1):
        files = sorted(p for p in cdir.iterdir()
                       if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise ValueError(f"{cdir}: empty class directory")
        class_names.append(cdir.name)
        for path in files:
            try:
                with Image.open(path) as im:
                    im = im.convert("L" if channels == 1 else "RGB")
                    im = im.resize((image_size, image_size), Image.BILINEAR)
                    arr = np.asarray(im)
            except Exception as exc:
                raise ValueError(f"cannot decode image file {path}") from exc
            if arr.ndim == 2:
                arr = arr[..., None]
            images.append(_to_unit_range(arr))
            labels.append(idx)
    return DatasetSplit(images=np.stack(images), labels=np.asarray(labels),
                        split=split, class_names=class_names)


def load_cifar10(root, split: str = "train") -> DatasetSplit:
    """CIFAR-10 python-pickle batches from a local directory (or extracted tar)."""
    root = Path(root)
    names = [f"data_batch_{i}" for i in range(1, 6)] if split == "train" else ["test_batch"]
    candidates = [root, root / "cifar-10-batches-py"]
    base = next((c for c in candidates if (c / names[0]).exists()), None)
    if base is None:
        raise FileNotFoundError(f"CIFAR-10 batches not found under {root}")
    images, labels = [], []
    for name in names:
        with open(base / name, "rb") as f:
            batch = pickle.load(f, encoding="bytes")
        data = batch[b"data"].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        images.append(_to_unit_range(data))
        labels.append(np.asarray(batch[b"labels"]) + 1)
    class_names = ["airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck"]
    return DatasetSplit(images=np.concatenate(images), labels=np.concatenate(labels),
                        split=split, class_names=class_names)


def load_svhn(root, split: str = "train") -> DatasetSplit:
    """SVHN cropped-digit .mat files (train_32x32.mat / test_32x32.mat)."""
    import scipy.io
    path = Path(root) / f"{split}_32x32.mat"
    if not path.exists():
        raise FileNotFoundError(f"SVHN file not found: {path}")
    mat = scipy.io.loadmat(path)
    images = _to_unit_range(mat["X"].transpose(3, 0, 1, 2))
    # SVHN stores digit 0 as label 10, which already fits the 1-based
    # convention: classes 1..9 are digits 1..9 and class 10 is digit 0.
    labels = mat["y"].ravel().astype(np.int64)
    class_names = [str(d) for d in range(1, 10)] + ["0"]
    return DatasetSplit(images=images, labels=labels, split=split,
                        class_names=class_names)


def mask_labels(split: DatasetSplit, fraction: float, seed: int) -> SemiSupervisedView:
    """Stratified random labeled mask, deterministic per seed.

    Per-class labeled counts differ from exact proportionality by at most 1;
    every class keeps at least one labeled item.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    mask = np.zeros(split.n, dtype=bool)
    for c in range(1, split.n_classes + 1):
        idx = np.flatnonzero(split.labels == c)
        if idx.size == 0:
            continue
        want = int(round(idx.size * fraction))
        if want == 0:
            log.warning("class %d would get 0 labeled items at fraction %.3f; keeping 1",
                        c, fraction)
            want = 1
        chosen = rng.choice(idx, size=min(want, idx.size), replace=False)
        mask[chosen] = True
    return SemiSupervisedView(split=split, labeled_mask=mask,
                              labeled_fraction=fraction, seed=seed)


class BatchStream:
    """Seed-deterministic, shuffled-per-epoch minibatch iterator.

    Partial final batches are dropped. Labeled streams yield (images, labels);
    unlabeled and 'any' streams yield images only.
    """

    def __init__(self, view: SemiSupervisedView, batch_size: int, kind: str, seed: int):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if kind not in ("labeled", "unlabeled", "any"):
            raise ValueError(f"kind must be labeled|unlabeled|any, got {kind!r}")
        self.view = view
        self.batch_size = batch_size
        self.kind = kind
        if kind == "labeled":
            self.indices = np.flatnonzero(view.labeled_mask)
            if self.indices.size == 0:
                raise ValueError("no labeled items in this view")
        elif kind == "unlabeled":
            self.indices = np.flatnonzero(~view.labeled_mask)
            if self.indices.size == 0:
                # fully labeled view: every item still streams as "unlabeled" input
                self.indices = np.arange(view.split.n)
        else:
            self.indices = np.arange(view.split.n)
        self.rng = np.random.default_rng(seed)
        self._epoch_order = []
        self._pos = 0
        self.draws = 0  # number of batches handed out, for instrumentation

    def _refill(self):
        self._epoch_order = self.rng.permutation(self.indices)
        usable = (self._epoch_order.size // self.batch_size) * self.batch_size
        if usable == 0:
            raise ValueError(
                f"batch_size {self.batch_size} larger than stream of {self.indices.size}"
            )
        self._epoch_order = self._epoch_order[:usable]
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self):
        if self._pos >= len(self._epoch_order):
            self._refill()
        sel = self._epoch_order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        self.draws += 1
        images = self.view.split.images[sel]
        if self.kind == "labeled":
            return images, self.view.split.labels[sel]
        return images

    def batches_per_epoch(self) -> int:
        return self.indices.size // self.batch_size


def batch_stream(view: SemiSupervisedView, batch_size: int, kind: str,
                 seed: int) -> BatchStream:
    return BatchStream(view, batch_size, kind, seed)


def make_toy_ring(modes: int, samples_per_mode: int, radius: float,
                  sigma: float, seed: int) -> DatasetSplit:
    """2-D Gaussian mixture on a ring, packaged as 1x1x2 'images'; label = mode."""
    if modes < 2:
        raise ValueError(f"modes must be >= 2, got {modes}")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(modes) / modes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    points, labels = [], []
    for k in range(modes):
        pts = centers[k] + sigma * rng.standard_normal((samples_per_mode, 2))
        points.append(pts)
        labels.append(np.full(samples_per_mode, k + 1))
    images = np.concatenate(points).astype(np.float32).reshape(-1, 1, 1, 2)
    return DatasetSplit(images=images, labels=np.concatenate(labels),
                        split="train", class_names=[f"mode_{k}" for k in range(modes)])


def ring_centers(modes: int, radius: float) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def make_glyphs(n_per_class: int, n_classes: int = 10, image_size: int = 16,
                noise: float = 0.15, seed: int = 0,
                split: str = "train") -> DatasetSplit:
    """Synthetic glyph classification set: a fixed random blob pattern per
    class plus per-sample pixel noise and a 1-pixel jitter."""
    pattern_rng = np.random.default_rng(12345)  # class templates are fixed
    templates = []
    for _ in range(n_classes):
        t = (pattern_rng.random((image_size, image_size)) < 0.25).astype(np.float32)
        templates.append(t * 2.0 - 1.0)
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for c in range(n_classes):
        for _ in range(n_per_class):
            dy, dx = rng.integers(-1, 2, size=2)
            img = np.roll(templates[c], (dy, dx), axis=(0, 1))
            img = img + noise * rng.standard_normal(img.shape).astype(np.float32)
            images.append(np.clip(img, -1.0, 1.0))
            labels.append(c + 1)
    images = np.stack(images)[..., None].astype(np.float32)
    return DatasetSplit(images=images, labels=np.asarray(labels), split=split,
                        class_names=[f"glyph_{c}" for c in range(n_classes)])
