"""IDX (MNIST) loading.

Images file (big endian)::

    u32 magic 0x00000803 | u32 count | u32 rows | u32 cols | u8 pixels[count*rows*cols]

Labels file::

    u32 magic 0x00000801 | u32 count | u8 labels[count]

Gzipped files are detected by their first two bytes.
"""

import gzip
import struct
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
N_CLASSES = 10
PIXEL_SCALE = 1.0 / 256.0

DESK_IMAGES = "mnist5k-images-idx3-ubyte.gz"
DESK_LABELS = "mnist5k-labels-idx1-ubyte.gz"


@dataclass
class Dataset:
    images: np.ndarray  # N x 784, values k/256
    labels: np.ndarray  # N x 10 one-hot
    train_idx: np.ndarray = field(default_factory=lambda: np.arange(0))
    val_idx: np.ndarray = field(default_factory=lambda: np.arange(0))

    def __len__(self):
        return self.images.shape[0]

    @property
    def classes(self):
        return self.labels.argmax(axis=1)

    def with_split(self, n_train, n_val):
        """Assign the first ``n_train`` rows to training and the next ``n_val`` to validation."""
        if n_train + n_val > len(self):
            raise ValueError(f"split {n_train}+{n_val} exceeds {len(self)} samples")
        self.train_idx = np.arange(n_train)
        self.val_idx = np.arange(n_train, n_train + n_val)
        return self

    def train(self):
        return self.images[self.train_idx], self.labels[self.train_idx]

    def validation(self):
        return self.images[self.val_idx], self.labels[self.val_idx]


def _read_bytes(source):
    if hasattr(source, "read_bytes"):
        raw = source.read_bytes()
    else:
        with open(source, "rb") as f:
            raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw, n_fields, magic, what):
    size = 4 * n_fields
    if len(raw) < size:
        raise FormatError(f"{what}: truncated header")
    fields = struct.unpack(f">{n_fields}I", raw[:size])
    if fields[0] != magic:
        raise FormatError(f"{what}: bad magic {fields[0]:#010x}, expected {magic:#010x}")
    return fields[1:], size


def read_idx_images(source, limit=None):
    raw = _read_bytes(source)
    (count, rows, cols), off = _header(raw, 4, IMAGES_MAGIC, "images")
    n = count if limit is None else min(count, limit)
    need = off + n * rows * cols
    if len(raw) < need:
        raise FormatError(f"images: truncated, need {need} bytes, have {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=off).reshape(n, rows * cols)


def read_idx_labels(source, limit=None):
    raw = _read_bytes(source)
    (count,), off = _header(raw, 2, LABELS_MAGIC, "labels")
    n = count if limit is None else min(count, limit)
    if len(raw) < off + n:
        raise FormatError(f"labels: truncated, need {off + n} bytes, have {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).copy()


def one_hot(labels, n_classes=N_CLASSES):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label out of range")
    return np.eye(n_classes)[labels]


def load_idx(images_path, labels_path, limit=None):
    """Parse an IDX image/label pair into a :class:`Dataset` scaled by 1/256."""
    if limit is not None and limit <= 0:
        raise ValueError("limit must be positive; an empty dataset is not usable")
    pixels = read_idx_images(images_path, limit)
    labels = read_idx_labels(labels_path, limit)
    if len(pixels) != len(labels):
        raise FormatError(f"{len(pixels)} images but {len(labels)} labels")
    return Dataset(pixels.astype(np.float64) * PIXEL_SCALE, one_hot(labels))


def write_idx(images_path, labels_path, pixels, labels, rows=28, cols=28):
    """Write uint8 images (N x rows*cols) and labels as uncompressed IDX files."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(pixels), rows * cols)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IMAGES_MAGIC, len(pixels), rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def desk_paths():
    """Bundled 5000-image MNIST sample (shuffled; every digit appears in the default 2000/500 split)."""
    root = resources.files("privml") / "_data"
    return root / DESK_IMAGES, root / DESK_LABELS


def load_desk(n_train=2000, n_val=500):
    images, labels = desk_paths()
    return load_idx(images, labels, n_train + n_val).with_split(n_train, n_val)
