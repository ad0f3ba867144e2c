"""CIFAR-10 binary ingestion, splits, and label-derived similarity.

The on-disk format is the standard "binary version": each record is 3073
bytes, one label byte in [0,9] followed by 3072 pixel bytes stored
channel-planar (all of R, then G, then B), each plane row-major 32x32.
Pixels are scaled to [0,1] on load; no mean subtraction.

Splits address images by their index in the loaded set and are stratified
by label. A SimilarityOracle turns labels into the pair conventions the
objectives expect: y (0 similar / 1 dissimilar) and s (+1 similar / -1
dissimilar), where similar means same label.

A synthetic set generator is included for tests and for machines without
the real dataset: each class gets a fixed random blocky pattern and each
image is that pattern with a random global sign flip plus pixel noise, so
class identity lives in spatial structure rather than in any linear
projection of the pixels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
N_CLASSES = 10
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)


@dataclass
class LabeledImageSet:
    """Images as float32 in [0,1], shape (n,3,32,32), with int labels."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def take(self, ids):
        ids = np.asarray(ids)
        return LabeledImageSet(self.images[ids], self.labels[ids])

    def to_bytes_array(self):
        """Recover the raw pixel bytes (exact for byte-quantized data)."""
        return np.round(self.images * 255.0).astype(np.uint8)


def read_batch_file(path):
    """One binary batch file -> (uint8 images (n,3,32,32), labels).

    Rejects files whose size is not a whole number of records (reporting
    the byte offset of the incomplete record) and records whose label
    byte exceeds 9. An empty file yields n=0 with a warning.
    """
    path = Path(path)
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size == 0:
        warnings.warn(f"{path}: empty batch file, loading 0 records")
        return (np.zeros((0,) + IMAGE_SHAPE, np.uint8),
                np.zeros(0, np.int64))
    n, leftover = divmod(raw.size, RECORD_BYTES)
    if leftover:
        raise DataError(f"{path}: truncated record at byte offset "
                        f"{n * RECORD_BYTES} ({leftover} trailing bytes, "
                        f"expected {RECORD_BYTES})")
    records = raw.reshape(n, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataError(f"{path}: corrupt record {bad[0]} has label "
                        f"{labels[bad[0]]}, valid labels are 0..9")
    images = records[:, 1:].reshape((n,) + IMAGE_SHAPE)
    return images.copy(), labels


def write_batch_file(path, images_u8, labels):
    """Inverse of read_batch_file, for fixtures and synthetic data."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels)
    n = len(labels)
    if images_u8.shape != (n,) + IMAGE_SHAPE:
        raise ValueError(f"expected images of shape {(n,) + IMAGE_SHAPE}, "
                         f"got {images_u8.shape}")
    if np.any(labels < 0) or np.any(labels > 9):
        raise ValueError("labels must be in 0..9")
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images_u8.reshape(n, -1)
    Path(path).write_bytes(records.tobytes())


def _from_bytes(images_u8, labels):
    return LabeledImageSet(
        images_u8.astype(np.float32) / np.float32(255.0),
        np.asarray(labels, dtype=np.int64))


def load_cifar10(directory, which):
    """Load the train (5 files) or test (1 file) portion of a dataset dir."""
    if which not in ("train", "test"):
        raise ConfigError(f"which must be 'train' or 'test', got {which!r}")
    directory = Path(directory)
    names = TRAIN_FILES if which == "train" else TEST_FILES
    chunks = []
    for name in names:
        path = directory / name
        if not path.exists():
            raise DataError(f"missing batch file {path}")
        chunks.append(read_batch_file(path))
    images = np.concatenate([c[0] for c in chunks])
    labels = np.concatenate([c[1] for c in chunks])
    return _from_bytes(images, labels)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass
class Split:
    """Index sets into one LabeledImageSet: disjoint query/database,
    training drawn from the database."""

    query_ids: np.ndarray
    db_ids: np.ndarray
    train_ids: np.ndarray


def _stratified_take(ids_by_class, total, rng_order):
    """Pick `total` ids spread as evenly as possible over the classes.

    ids_by_class lists are consumed in place (picked ids removed).
    rng_order fixes which classes absorb the remainder.
    """
    classes = len(ids_by_class)
    base, extra = divmod(total, classes)
    counts = np.full(classes, base)
    counts[rng_order[:extra]] += 1
    picked = []
    for c in range(classes):
        take = int(counts[c])
        if take > len(ids_by_class[c]):
            raise ConfigError(
                f"class {c} has only {len(ids_by_class[c])} items left, "
                f"cannot take {take}")
        picked.append(ids_by_class[c][:take])
        ids_by_class[c] = ids_by_class[c][take:]
    return np.sort(np.concatenate(picked))


def make_split(dataset, n_query, n_train, seed, n_db=None):
    """Stratified query/database/training split, reproducible by seed.

    The database defaults to everything outside the query set; pass n_db
    to subsample it (the desk-scale protocol). Training ids are a subset
    of the database.
    """
    labels = dataset.labels
    n = len(labels)
    if n_db is None:
        n_db = n - n_query
    if n_query + n_db > n:
        raise ConfigError(f"split oversubscribed: {n_query} query + "
                          f"{n_db} database > {n} items")
    if n_train > n_db:
        raise ConfigError(f"training subset {n_train} exceeds database "
                          f"size {n_db}")
    present = np.unique(labels)
    rng = np.random.default_rng(seed)
    ids_by_class = []
    for c in present:
        ids = np.nonzero(labels == c)[0]
        ids_by_class.append(rng.permutation(ids))
    remainder_order = rng.permutation(len(present))
    query_ids = _stratified_take(ids_by_class, n_query, remainder_order)
    db_ids = _stratified_take(ids_by_class, n_db, remainder_order)
    pool = [db_ids[labels[db_ids] == c] for c in present]
    train_ids = _stratified_take(pool, n_train, remainder_order)
    return Split(query_ids, db_ids, train_ids)


def write_split_ids(path, ids):
    Path(path).write_text("".join(f"{int(i)}\n" for i in ids))


def read_split_ids(path):
    text = Path(path).read_text()
    try:
        return np.array([int(line) for line in text.split()], dtype=np.int64)
    except ValueError as e:
        raise DataError(f"{path}: malformed id list ({e})") from None


# ---------------------------------------------------------------------------
# Similarity
# ---------------------------------------------------------------------------

class SimilarityOracle:
    """Pairwise similarity from labels: similar means equal label.

    y(...) uses the contrastive convention (0 similar / 1 dissimilar),
    s(...) the sign convention (+1 similar / -1 dissimilar). Both accept
    one id list (square matrix) or two (rectangular).

    A second label set makes the oracle cross-set: the first index (i,
    ids_a) reads ``labels``, the second (j, ids_b) reads ``labels_b``.
    That is the query-versus-database case in retrieval scoring.
    """

    def __init__(self, labels, labels_b=None):
        self.labels = np.asarray(labels)
        self.labels_b = self.labels if labels_b is None \
            else np.asarray(labels_b)

    def similar(self, i, j):
        return bool(self.labels[i] == self.labels_b[j])

    def mask(self, ids_a, ids_b=None):
        a = self.labels[np.asarray(ids_a)]
        b = self.labels_b[np.asarray(ids_a if ids_b is None else ids_b)]
        return a[:, None] == b[None, :]

    def y(self, ids_a, ids_b=None):
        return (~self.mask(ids_a, ids_b)).astype(np.int64)

    def s(self, ids_a, ids_b=None):
        return np.where(self.mask(ids_a, ids_b), 1, -1).astype(np.int64)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def class_patterns(classes=N_CLASSES, block=4, seed=20240501, active=16):
    """Sparse +-1 blocky constellations, one (3,32,32) field per class.

    Each class occupies `active` of the coarse grid cells with a fixed
    per-channel color; everywhere else the field is zero. Classes draw
    their cells independently, so constellations overlap.
    """
    if 32 % block:
        raise ConfigError(f"block {block} must divide 32")
    cells = 32 // block
    if not 1 <= active <= cells * cells:
        raise ConfigError(f"active cells {active} outside 1..{cells**2}")
    rng = np.random.default_rng(seed)
    coarse = np.zeros((classes, 3, cells * cells))
    for c in range(classes):
        pos = rng.choice(cells * cells, size=active, replace=False)
        coarse[c, :, pos] = rng.choice([-1.0, 1.0], size=(active, 3))
    coarse = coarse.reshape(classes, 3, cells, cells)
    return np.repeat(np.repeat(coarse, block, axis=2), block, axis=3)


def make_synthetic_set(n, seed, classes=N_CLASSES, amplitude=0.3,
                       noise=0.05, block=4, keep=1.0, clutter=0):
    """Balanced labeled set in the CIFAR shape, byte-quantized.

    Every image shows its class constellation with each evidence cell
    independently kept with probability `keep`, plus `clutter` randomly
    placed cells of the same amplitude that carry no class information,
    a global +-1 sign flip, and pixel noise, then rounds to bytes. The
    flip makes every linear functional of the pixels carry the same
    distribution in each class, so only nonlinear features separate the
    classes; occlusion and clutter keep single cells from being decisive.
    """
    if n % classes:
        raise ConfigError(f"n={n} must be a multiple of {classes} for a "
                          f"balanced set")
    patterns = class_patterns(classes, block)
    cells = 32 // block
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat(np.arange(classes), n // classes))
    flips = rng.choice([-1.0, 1.0], size=n)

    keep_mask = rng.random((n, 1, cells, cells)) < keep
    clut_pos = np.argsort(rng.random((n, cells * cells)),
                          axis=1)[:, :clutter]
    clut = np.zeros((n, 3, cells * cells))
    np.put_along_axis(clut, clut_pos[:, None, :],
                      rng.choice([-1.0, 1.0], size=(n, 3, clutter)), axis=2)
    clut = clut.reshape(n, 3, cells, cells)

    # keep_mask broadcasts over channels: a cell is hidden in all three
    field = patterns[labels] * np.repeat(np.repeat(
        keep_mask, block, axis=2), block, axis=3)
    field += np.repeat(np.repeat(clut, block, axis=2), block, axis=3)

    pixels = 0.5 + amplitude * flips[:, None, None, None] * field
    pixels += noise * rng.standard_normal((n,) + IMAGE_SHAPE)
    quantized = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    return _from_bytes(quantized, labels)


def write_synthetic_cifar(directory, n_train=6000, n_test=1000,
                          seed=20240502):
    """Write a synthetic dataset directory in the CIFAR-10 binary layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train = make_synthetic_set(n_train, seed)
    test = make_synthetic_set(n_test, seed + 1)
    per_file = np.array_split(np.arange(n_train), len(TRAIN_FILES))
    bytes_train = train.to_bytes_array()
    for name, ids in zip(TRAIN_FILES, per_file):
        write_batch_file(directory / name, bytes_train[ids],
                         train.labels[ids])
    write_batch_file(directory / TEST_FILES[0], test.to_bytes_array(),
                     test.labels)
    return directory
