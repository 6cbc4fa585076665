"""
IDX dataset files (MNIST format), synthetic datasets and train/validation splits.

IDX layout (big-endian):
    0000  32-bit magic: 0x00000803 for 3-D unsigned-byte images, 0x00000801 for labels
    0004  32-bit dimension sizes, one per dimension
    ....  unsigned bytes, row-major
"""

import gzip
import logging
import math
import struct
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch

from models.dataset import Dataset, compute_channel_stats
from utils.error_handler import DatasetFormatError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# standard MNIST file stems per split
MNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}

PathLike = Union[str, Path]


def _read_bytes(path: PathLike) -> bytes:
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:2] == b'\x1f\x8b':
        raw = gzip.decompress(raw)
    return raw


def read_idx(path: PathLike, expected_magic: int) -> np.ndarray:
    """
    Parse one IDX file of unsigned bytes.

    Raises:
        DatasetFormatError: on a wrong magic number or a truncated payload
    """
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: file too short for an IDX header")
    magic, = struct.unpack('>I', raw[:4])
    if magic != expected_magic:
        raise DatasetFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DatasetFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f'>{ndim}I', raw[4:header_len])
    expected = math.prod(dims)
    payload = raw[header_len:]
    if len(payload) < expected:
        raise DatasetFormatError(
            f"{path}: truncated payload, {len(payload)} of {expected} bytes present"
        )
    return np.frombuffer(payload, dtype=np.uint8, count=expected).reshape(dims)


def write_idx(path: PathLike, array: np.ndarray) -> None:
    """Write an unsigned-byte array as IDX (magic 0x0801 for 1-D, 0x0803 for 3-D)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    header = struct.pack('>I', magic) + struct.pack(f'>{array.ndim}I', *array.shape)
    with open(path, 'wb') as f:
        f.write(header)
        f.write(array.tobytes())


def load_idx(images_path: PathLike, labels_path: PathLike, name: str = '') -> Dataset:
    """
    Load an IDX image/label pair into a Dataset.

    Pixels are scaled by 1/255 into [0, 1]; images gain a channel dimension.

    Raises:
        DatasetFormatError: bad magic, truncation or count mismatch
    """
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(
            f"Image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    pixels = torch.from_numpy(images.astype(np.float64) / 255.0).unsqueeze(1)
    dataset = Dataset(
        images=pixels,
        labels=torch.from_numpy(labels.astype(np.int64)),
        task='classification',
        name=name or Path(images_path).name,
    )
    logger.info(f"Loaded {len(dataset)} images of shape {dataset.image_shape} from {images_path}")
    return dataset


def _find(directory: Path, stem: str) -> Path:
    for candidate in (stem, f"{stem}.gz", stem.replace('-idx', '.idx')):
        path = directory / candidate
        if path.exists():
            return path
    raise FileNotFoundError(f"No {stem}[.gz] in {directory}")


def load_mnist_dir(directory: PathLike, split: str = 'train', limit: Optional[int] = None) -> Dataset:
    """Load the train or test split from a directory holding the standard MNIST file names."""
    if split not in MNIST_FILES:
        raise ValueError(f"Unknown split {split!r}; expected one of {list(MNIST_FILES)}")
    directory = Path(directory)
    images_stem, labels_stem = MNIST_FILES[split]
    dataset = load_idx(_find(directory, images_stem), _find(directory, labels_stem), name=f"mnist-{split}")
    if limit is not None and limit < len(dataset):
        dataset = dataset.subset(range(limit))
    return dataset


def split_train_validation(dataset: Dataset, fraction: float, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """
    Random train/validation split.

    Channel statistics of both parts are computed from the train part only.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"Validation fraction must lie in [0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_val = int(round(len(dataset) * fraction))
    train = dataset.subset(sorted(order[n_val:].tolist()), name=f"{dataset.name}-train")
    validation = dataset.subset(sorted(order[:n_val].tolist()), name=f"{dataset.name}-validation")
    train.channel_stats = compute_channel_stats(train.images)
    validation.channel_stats = list(train.channel_stats)
    return train, validation


def _class_centers(n_classes: int, height: int, width: int) -> np.ndarray:
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    radius = 0.3 * min(height, width)
    return np.stack([(height - 1) / 2 - radius * np.sin(angles),
                     (width - 1) / 2 + radius * np.cos(angles)], axis=1)


def _blobs(centers: np.ndarray, height: int, width: int, sigma: float) -> np.ndarray:
    rows = np.arange(height)[None, :, None]
    cols = np.arange(width)[None, None, :]
    d2 = (rows - centers[:, 0, None, None]) ** 2 + (cols - centers[:, 1, None, None]) ** 2
    return np.exp(-d2 / (2 * sigma ** 2))


def make_synthetic_dataset(n: int, shape: Sequence[int] = (1, 28, 28), n_classes: int = 10,
                           seed: int = 0, noise: float = 0.05, name: str = 'synthetic') -> Dataset:
    """
    Seeded classification data: class k is a Gaussian blob at the k-th point of a
    circle around the image center, plus uniform noise, clipped to [0, 1].
    """
    channels, height, width = shape
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    centers = _class_centers(n_classes, height, width)[labels]
    centers = centers + rng.normal(0.0, 0.5, size=centers.shape)
    sigma = max(1.0, min(height, width) / 8)
    base = _blobs(centers, height, width, sigma)
    images = base[:, None, :, :] * rng.uniform(0.7, 1.0, size=(n, channels, 1, 1))
    images = images + rng.uniform(0.0, noise, size=(n, channels, height, width))
    images = np.clip(images, 0.0, 1.0)
    return Dataset(
        images=torch.from_numpy(images.astype(np.float64)),
        labels=torch.from_numpy(labels.astype(np.int64)),
        task='classification',
        n_classes=n_classes,
        name=name,
    )


def make_synthetic_regression(n: int, shape: Sequence[int] = (3, 32, 32), seed: int = 0,
                              name: str = 'synthetic-regression') -> Dataset:
    """Seeded regression data: the target is the horizontal blob position scaled to [-1, 1]."""
    channels, height, width = shape
    rng = np.random.default_rng(seed)
    cols = rng.uniform(0.2 * (width - 1), 0.8 * (width - 1), size=n)
    rows = np.full(n, (height - 1) / 2)
    sigma = max(1.0, min(height, width) / 8)
    base = _blobs(np.stack([rows, cols], axis=1), height, width, sigma)
    images = np.clip(np.repeat(base[:, None], channels, axis=1)
                     + rng.uniform(0.0, 0.05, size=(n, channels, height, width)), 0.0, 1.0)
    targets = 2 * cols / (width - 1) - 1
    return Dataset(
        images=torch.from_numpy(images.astype(np.float64)),
        labels=torch.from_numpy(targets.astype(np.float64)).unsqueeze(1),
        task='regression',
        name=name,
    )
