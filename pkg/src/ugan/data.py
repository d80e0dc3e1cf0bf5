"""Datasets: IDX loading, synthetic 2-D sets, label splits, batching.

Every dataset is a flat float64 matrix with entries in [0,1] plus 1-based
integer labels in {1..K} and named index splits (train/valid/test).  The
semi-supervised protocol draws a small stratified labeled subset from the
train split; the rest of train becomes the unlabeled pool.
"""

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    """Unit-box features, 1-based labels, named index splits."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise DomainError(
                f"dataset needs (N, d) features and (N,) labels, got {self.x.shape}, {self.y.shape}"
            )
        if self.x.size and (self.x.min() < 0.0 or self.x.max() > 1.0):
            raise DomainError("dataset features must lie in [0, 1]")
        if self.y.size and (self.y.min() < 1 or self.y.max() > self.num_classes):
            raise DomainError(f"labels must lie in 1..{self.num_classes}")
        n = self.x.shape[0]
        for name, idx in self.splits.items():
            idx = np.asarray(idx, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise DomainError(f"split {name!r} indexes outside the dataset")
            self.splits[name] = idx

    def split(self, name):
        if name not in self.splits:
            raise DomainError(f"no split named {name!r}, have {sorted(self.splits)}")
        return self.splits[name]


# ---------------------------------------------------------------------------
# IDX format

def _open_maybe_gz(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def _read_exact(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"{path}: truncated IDX file while reading {what}")
    return buf


def read_idx_images(path):
    """Big-endian IDX image file -> (N, rows, cols) uint8 array."""
    with _open_maybe_gz(path) as fh:
        magic, n, rows, cols = struct.unpack(">iiii", _read_exact(fh, 16, path, "header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{path}: bad IDX image magic {magic}, expected {IDX_IMAGES_MAGIC}")
        if min(n, rows, cols) < 0:
            raise FormatError(f"{path}: negative dimension in header")
        payload = _read_exact(fh, n * rows * cols, path, "pixel data")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path):
    """Big-endian IDX label file -> (N,) uint8 array."""
    with _open_maybe_gz(path) as fh:
        magic, n = struct.unpack(">ii", _read_exact(fh, 8, path, "header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{path}: bad IDX label magic {magic}, expected {IDX_LABELS_MAGIC}")
        if n < 0:
            raise FormatError(f"{path}: negative count in header")
        payload = _read_exact(fh, n, path, "label data")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after label data")
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DomainError(f"expected (N, rows, cols) uint8 images, got shape {images.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def _find_idx(data_dir, stem):
    for candidate in (stem, stem + ".gz"):
        path = os.path.join(data_dir, candidate)
        if os.path.exists(path):
            return path
    raise FormatError(f"IDX file not found: {os.path.join(data_dir, stem)}[.gz]")


def load_mnist(data_dir=None, valid_size=10_000):
    """Load the four IDX files; valid split is the tail of the train file.

    data_dir defaults to the UGAN_DATA_DIR environment variable.  Pixel
    bytes are scaled to [0,1]; 0-based digits become 1-based labels.
    """
    data_dir = data_dir or os.environ.get("UGAN_DATA_DIR")
    if not data_dir:
        raise DomainError("no data directory: pass data_dir or set UGAN_DATA_DIR")
    imgs_tr = read_idx_images(_find_idx(data_dir, MNIST_FILES["train_images"]))
    labels_tr = read_idx_labels(_find_idx(data_dir, MNIST_FILES["train_labels"]))
    imgs_te = read_idx_images(_find_idx(data_dir, MNIST_FILES["test_images"]))
    labels_te = read_idx_labels(_find_idx(data_dir, MNIST_FILES["test_labels"]))
    if imgs_tr.shape[0] != labels_tr.shape[0] or imgs_te.shape[0] != labels_te.shape[0]:
        raise FormatError(
            f"image/label counts disagree: train {imgs_tr.shape[0]}/{labels_tr.shape[0]}, "
            f"test {imgs_te.shape[0]}/{labels_te.shape[0]}"
        )
    if valid_size >= imgs_tr.shape[0]:
        raise DomainError(f"valid_size {valid_size} leaves no training data")
    x = np.concatenate([imgs_tr, imgs_te]).reshape(-1, imgs_tr.shape[1] * imgs_tr.shape[2]) / 255.0
    y = np.concatenate([labels_tr, labels_te]).astype(np.int64) + 1
    n_tr = imgs_tr.shape[0]
    splits = {
        "train": np.arange(n_tr - valid_size),
        "valid": np.arange(n_tr - valid_size, n_tr),
        "test": np.arange(n_tr, n_tr + imgs_te.shape[0]),
    }
    return Dataset(x, y, num_classes=int(y.max()), splits=splits)


# ---------------------------------------------------------------------------
# synthetic 2-D datasets

def _split_ranges(sizes):
    bounds = np.cumsum([0] + list(sizes))
    return {
        name: np.arange(bounds[i], bounds[i + 1])
        for i, name in enumerate(("train", "valid", "test"))
    }


def _moons_points(n, noise, rng):
    half = n // 2
    counts = (half + n % 2, half)
    xs, ys = [], []
    for label, count in zip((1, 2), counts):
        t = rng.uniform(0.0, np.pi, size=count)
        if label == 1:
            pts = np.stack([np.cos(t), np.sin(t)], axis=1)
        else:
            pts = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        pts += rng.normal(scale=noise, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(count, label, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    # fixed affine map into the unit square; the clip only bites noise tails
    x[:, 0] = (x[:, 0] + 1.5) / 4.0
    x[:, 1] = (x[:, 1] + 1.0) / 2.5
    np.clip(x, 0.0, 1.0, out=x)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def two_moons(n_train=1200, n_valid=200, n_test=400, noise=0.1, seed=0):
    """Two interleaved half-circles mapped into the unit square; K = 2."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    parts = [_moons_points(n, noise, rng) for n in (n_train, n_valid, n_test)]
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    return Dataset(x, y, num_classes=2, splits=_split_ranges((n_train, n_valid, n_test)))


def gaussian_mixture(n_train=1200, n_valid=200, n_test=400, num_classes=4, scale=0.05, seed=0):
    """K isotropic blobs on a circle inside the unit square."""
    if not 2 <= num_classes <= 12:
        raise DomainError(f"gaussian_mixture supports 2..12 classes, got {num_classes}")
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = 0.5 + 0.3 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 202]))
    xs, ys = [], []
    for n in (n_train, n_valid, n_test):
        labels = rng.integers(1, num_classes + 1, size=n)
        pts = centers[labels - 1] + rng.normal(scale=scale, size=(n, 2))
        np.clip(pts, 0.0, 1.0, out=pts)
        xs.append(pts)
        ys.append(labels)
    return Dataset(
        np.concatenate(xs), np.concatenate(ys), num_classes=num_classes,
        splits=_split_ranges((n_train, n_valid, n_test)),
    )


# ---------------------------------------------------------------------------
# semi-supervised splits and batching

def stratified_labeled_split(dataset, n_labeled, seed, max_unlabeled=None):
    """Pick n_labeled/K train points per class; the rest of train is unlabeled.

    Returns (labeled_indices, unlabeled_indices), both into the dataset.
    """
    k = dataset.num_classes
    if n_labeled % k != 0:
        raise DomainError(f"n_labeled={n_labeled} is not divisible by {k} classes")
    per_class = n_labeled // k
    train = dataset.split("train")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 303]))
    chosen = []
    for label in range(1, k + 1):
        pool = train[dataset.y[train] == label]
        if pool.size < per_class:
            raise DomainError(
                f"class {label} has only {pool.size} train points, need {per_class}"
            )
        chosen.append(rng.choice(pool, size=per_class, replace=False))
    labeled = np.sort(np.concatenate(chosen))
    unlabeled = np.setdiff1d(train, labeled)
    if max_unlabeled is not None and unlabeled.size > max_unlabeled:
        unlabeled = np.sort(rng.choice(unlabeled, size=max_unlabeled, replace=False))
    return labeled, unlabeled


def manual_labeled_split(dataset, labeled_indices, max_unlabeled=None, seed=0):
    """Use caller-provided labeled indices (must lie in the train split)."""
    train = dataset.split("train")
    labeled = np.asarray(labeled_indices, dtype=np.int64)
    if labeled.size == 0:
        raise DomainError("manual split needs at least one labeled index")
    if np.unique(labeled).size != labeled.size:
        raise DomainError("manual split contains duplicate indices")
    if not np.isin(labeled, train).all():
        raise DomainError("manual split indices must lie in the train split")
    unlabeled = np.setdiff1d(train, labeled)
    if max_unlabeled is not None and unlabeled.size > max_unlabeled:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 303]))
        unlabeled = np.sort(rng.choice(unlabeled, size=max_unlabeled, replace=False))
    return np.sort(labeled), unlabeled


def batch_iterator(indices, batch_size, rng=None, shuffle=True):
    """Yield batches of indices; a trailing short batch is kept.

    Shuffling draws from the rng handed in, so the caller controls the
    per-epoch stream (training reseeds per epoch for resumability).
    """
    indices = np.asarray(indices, dtype=np.int64)
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        if rng is None:
            raise DomainError("shuffling batch_iterator needs an rng")
        indices = rng.permutation(indices)
    for start in range(0, indices.size, batch_size):
        yield indices[start : start + batch_size]
