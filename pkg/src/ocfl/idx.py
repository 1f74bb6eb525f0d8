"""Reader/writer for the IDX binary format used by the MNIST family.

Header: 4-byte big-endian magic ``0x000008TT`` followed by one big-endian
uint32 per dimension, then the row-major payload. Only unsigned-byte payloads
(``TT = 0x08``) are handled here.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedPayloadError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


def _read(path, magic: int, ndim: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedPayloadError(f"{path}: file shorter than the magic number")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise BadMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedPayloadError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(data) - header < size:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(data) - header} bytes, header promises {size}"
        )
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Load an image/label pair as ``(features in [0, 1], labels)``.

    Images are flattened row-major to ``(n, rows * cols)`` and divided by 255.
    """
    images = _read(images_path, IMAGES_MAGIC, 3)
    labels = _read(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return features, labels.astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", LABELS_MAGIC, labels.shape[0]) + labels.tobytes())
