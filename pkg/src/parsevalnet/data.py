"""Dataset ingestion: IDX image files, CIFAR-10 binaries, augmentation.

Both loaders parse the raw binary formats directly and fail with a
:class:`DataFormatError` (including a byte offset where possible) on any
malformed input. Gzipped files are handled transparently by extension.
"""

import gzip
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .graph import Batch

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3x1024 channel-major pixels


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix != ".gz":
        return path.read_bytes()
    try:
        with gzip.open(path, "rb") as f:
            return f.read()
    except (OSError, EOFError, zlib.error) as exc:
        raise DataFormatError(f"{path}: not a valid gzip stream ({exc})", offset=0) from exc


def _read_idx_images(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated IDX image header", offset=len(raw))
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(f"{path}: bad IDX image magic 0x{magic:08x}", offset=0)
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for {n} images of {rows}x{cols}, got {len(raw)}",
            offset=min(len(raw), expected),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def _read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated IDX label header", offset=len(raw))
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABEL_MAGIC:
        raise DataFormatError(f"{path}: bad IDX label magic 0x{magic:08x}", offset=0)
    if len(raw) != 8 + n:
        raise DataFormatError(
            f"{path}: expected {8 + n} bytes for {n} labels, got {len(raw)}",
            offset=min(len(raw), 8 + n),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def load_idx(images_path, labels_path) -> Batch:
    """Load an IDX image/label file pair; pixels are scaled to [0, 1]."""
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Batch(inputs, labels.astype(np.int64))


def write_idx_images(path, images: np.ndarray):
    """Write (n, rows, cols) uint8 images in IDX format (gzipped iff *.gz)."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    payload = struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols) + images.tobytes()
    _write_bytes(path, payload)


def write_idx_labels(path, labels: np.ndarray):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    payload = struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes()
    _write_bytes(path, payload)


def _write_bytes(path, payload: bytes):
    path = Path(path)
    if path.suffix == ".gz":
        # mtime pinned and filename omitted so identical payloads produce
        # identical files regardless of when or where they are written
        with open(path, "wb") as raw:
            with gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as f:
                f.write(payload)
    else:
        path.write_bytes(payload)


# ---------------------------------------------------------------------------
# CIFAR-10 binary format


def read_cifar10_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one CIFAR-10 binary batch into labels and (n, 32, 32, 3) uint8."""
    raw = _read_bytes(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}",
            offset=len(raw) - len(raw) % CIFAR_RECORD_BYTES,
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(
            f"{path}: label {labels[bad]} out of range", offset=bad * CIFAR_RECORD_BYTES
        )
    # channel-major (3, 32, 32) -> (32, 32, 3)
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return labels.astype(np.int64), np.ascontiguousarray(images)


def normalize_channels(images: np.ndarray) -> np.ndarray:
    """Per-image, per-channel standardization to mean 0 / std 1.

    ``images`` is (n, h, w, c) in any numeric dtype; constant channels get
    a unit denominator instead of dividing by zero.
    """
    x = images.astype(np.float64)
    mean = x.mean(axis=(1, 2), keepdims=True)
    std = x.std(axis=(1, 2), keepdims=True)
    std = np.where(std == 0.0, 1.0, std)
    return (x - mean) / std


def load_cifar10(directory) -> tuple[Batch, Batch]:
    """Load the 5 training batches + test batch, channel-normalized per image."""
    directory = Path(directory)
    train_files = [directory / f"data_batch_{i}.bin" for i in range(1, 6)]
    test_file = directory / "test_batch.bin"
    labels_parts, image_parts = [], []
    for f in train_files:
        lab, img = read_cifar10_file(f)
        labels_parts.append(lab)
        image_parts.append(img)
    train_labels = np.concatenate(labels_parts)
    train_images = np.concatenate(image_parts)
    test_labels, test_images = read_cifar10_file(test_file)

    def to_batch(labels, images):
        x = normalize_channels(images)
        return Batch(x.reshape(x.shape[0], -1), labels)

    return to_batch(train_labels, train_images), to_batch(test_labels, test_images)


def split_validation(batch: Batch, n_val: int, seed: int) -> tuple[Batch, Batch]:
    """Seed-deterministic (train, validation) split with n_val held out."""
    from .rng import make_rng

    if not 0 < n_val < batch.n:
        raise ValueError(f"n_val must be in (0, {batch.n})")
    perm = make_rng(seed).permutation(batch.n)
    return batch.subset(perm[n_val:]), batch.subset(perm[:n_val])


def augment(image: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Pad-crop-flip augmentation for (h, w, c) images.

    Zero-pads by ``pad`` on each side, crops a random window of the
    original size, then horizontally flips with probability 1/2.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise DataFormatError("augment expects an (h, w, c) image")
    h, w, c = image.shape
    padded = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=image.dtype)
    padded[pad:pad + h, pad:pad + w] = image
    oy = int(rng.integers(0, 2 * pad + 1))
    ox = int(rng.integers(0, 2 * pad + 1))
    out = padded[oy:oy + h, ox:ox + w]
    if rng.random() < 0.5:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# directory-level loading used by the CLI

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find_idx_pair(directory: Path, names: tuple[str, str]):
    for suffix in ("", ".gz"):
        imgs = directory / (names[0] + suffix)
        labs = directory / (names[1] + suffix)
        if imgs.exists() and labs.exists():
            return imgs, labs
    return None


def load_dataset(directory, split: str = "test") -> Batch:
    """Load a dataset directory, detecting MNIST IDX or CIFAR-10 binaries."""
    directory = Path(directory)
    pair = _find_idx_pair(directory, MNIST_FILES[split])
    if pair is not None:
        return load_idx(*pair)
    if (directory / "test_batch.bin").exists():
        train, test = load_cifar10(directory)
        return train if split == "train" else test
    raise DataFormatError(f"no recognizable dataset in {directory}")
