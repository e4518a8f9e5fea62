"""IDX container parsing and writing (big-endian, as used by MNIST files).

Images: magic 0x00000803, u32 dims (n, rows, cols), u8 pixels.
Labels: magic 0x00000801, u32 count, u8 labels.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import IdxCountMismatchError, IdxMagicError, IdxTruncatedError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# standard file names inside an MNIST-style directory
TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


def _read_exact(f, n, what, path):
    data = f.read(n)
    if len(data) != n:
        raise IdxTruncatedError(f"{path}: truncated {what} (wanted {n} bytes, got {len(data)})")
    return data


def load_mnist_idx(images_path, labels_path):
    """Parse an images/labels IDX pair; pixels scaled to [0, 1] float32.

    Returns ``(images, labels)`` with images shaped (n, rows, cols).
    """
    with open(images_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "image magic", images_path))
        if magic != IMAGE_MAGIC:
            raise IdxMagicError(
                f"{images_path}: expected image magic 0x{IMAGE_MAGIC:08x}, got 0x{magic:08x}"
            )
        n, rows, cols = struct.unpack(
            ">III", _read_exact(f, 12, "image header", images_path)
        )
        raw = _read_exact(f, n * rows * cols, "image payload", images_path)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows, cols)
    images = images.astype(np.float32) / 255.0

    with open(labels_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "label magic", labels_path))
        if magic != LABEL_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: expected label magic 0x{LABEL_MAGIC:08x}, got 0x{magic:08x}"
            )
        (n_labels,) = struct.unpack(">I", _read_exact(f, 4, "label header", labels_path))
        raw = _read_exact(f, n_labels, "label payload", labels_path)
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n != n_labels:
        raise IdxCountMismatchError(
            f"{images_path} holds {n} images but {labels_path} holds {n_labels} labels"
        )
    return images, labels


def write_idx_images(path, images: np.ndarray):
    """Write u8 images (n, rows, cols) as an IDX3 file."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def load_mnist_dir(directory):
    """Load the four standard IDX files from a directory.

    Returns ``(train_images, train_labels, test_images, test_labels)``.
    """
    return load_mnist_idx(
        os.path.join(directory, TRAIN_IMAGES), os.path.join(directory, TRAIN_LABELS)
    ) + load_mnist_idx(
        os.path.join(directory, TEST_IMAGES), os.path.join(directory, TEST_LABELS)
    )
