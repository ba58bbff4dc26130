"""IDX file reading/writing (the MNIST distribution format), batching and merging."""
from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SIDE = 28
PIXELS = SIDE * SIDE
DATA_ROOT_ENV = "WVAE_DATA_ROOT"

SOURCE_TAGS = ("original", "generated-KL", "generated-W")

_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    pass


class MagicMismatchError(IdxFormatError):
    pass


class DimensionMismatchError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class PixelRangeError(ValueError):
    pass


@dataclass(frozen=True)
class ImageSet:
    """``images`` is ``(N, 784)`` in [0, 1]; ``sources`` tags each row's origin."""

    images: np.ndarray
    labels: np.ndarray | None = None
    sources: np.ndarray | None = None

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim != 2 or images.shape[1] != PIXELS:
            raise DimensionMismatchError(f"images must be (N, {PIXELS}), got {images.shape}")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise PixelRangeError("pixel values must lie in [0, 1]")
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(images),):
                raise DimensionMismatchError(
                    f"{len(images)} images but labels have shape {labels.shape}"
                )
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
        sources = self.sources
        if sources is None:
            sources = np.full(len(images), "original")
        sources = np.asarray(sources, dtype="<U12")
        if sources.shape != (len(images),):
            raise DimensionMismatchError("one source tag per image required")
        object.__setattr__(self, "sources", sources)

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, index) -> ImageSet:
        labels = None if self.labels is None else self.labels[index]
        return ImageSet(self.images[index], labels, self.sources[index])

    def source_counts(self) -> dict[str, int]:
        tags, counts = np.unique(self.sources, return_counts=True)
        return {str(t): int(c) for t, c in zip(tags, counts)}

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(to_bytes(self.images).tobytes())
        if self.labels is not None:
            h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()


def to_bytes(images: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to uint8 with round(p * 255)."""
    return np.rint(np.asarray(images, dtype=np.float64) * 255.0).astype(np.uint8)


def _read_raw(path) -> bytes:
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_header(data: bytes, magic: int, ndim: int, path) -> tuple[int, ...]:
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise TruncatedFileError(f"{path}: header truncated")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise MagicMismatchError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    expected = header_len + int(np.prod(dims))
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: {len(data)} bytes, header promises {expected}")
    return dims


def read_idx_images(path) -> np.ndarray:
    data = _read_raw(path)
    n, rows, cols = _parse_header(data, IMAGE_MAGIC, 3, path)
    if (rows, cols) != (SIDE, SIDE):
        raise DimensionMismatchError(f"{path}: images are {rows}x{cols}, expected 28x28")
    pixels = np.frombuffer(data, dtype=np.uint8, count=n * PIXELS, offset=16)
    return pixels.reshape(n, PIXELS) / 255.0


def read_idx_labels(path) -> np.ndarray:
    data = _read_raw(path)
    (n,) = _parse_header(data, LABEL_MAGIC, 1, path)
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def load_idx(images_path, labels_path=None) -> ImageSet:
    images = read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if len(labels) != len(images):
            raise DimensionMismatchError(
                f"{len(images)} images but {len(labels)} labels"
            )
    return ImageSet(images, labels)


def idx_image_bytes(images: np.ndarray) -> bytes:
    images = np.asarray(images)
    return struct.pack(">IIII", IMAGE_MAGIC, len(images), SIDE, SIDE) + to_bytes(images).tobytes()


def idx_label_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("labels must fit in one byte")
    return struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()


def write_idx(data: ImageSet, images_path, labels_path=None) -> None:
    Path(images_path).write_bytes(idx_image_bytes(data.images))
    if labels_path is not None:
        if data.labels is None:
            raise ValueError("ImageSet has no labels to write")
        Path(labels_path).write_bytes(idx_label_bytes(data.labels))


def data_root(root=None) -> Path:
    root = root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise FileNotFoundError(f"no dataset directory given and ${DATA_ROOT_ENV} is unset")
    return Path(root)


def load_mnist(split: str = "train", root=None) -> ImageSet:
    """Load a standard split from ``root`` (or ``$WVAE_DATA_ROOT``); ``.gz`` names also work."""
    base = data_root(root)
    paths = []
    for name in _SPLIT_FILES[split]:
        for candidate in (base / name, base / f"{name}.gz"):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            raise FileNotFoundError(f"{name} not found under {base}")
    return load_idx(*paths)


def shuffled_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    """Fisher-Yates shuffle of ``range(n)`` driven by ``rng``."""
    order = np.arange(n)
    draws = rng.random(n)
    for i in range(n - 1, 0, -1):
        j = min(int(draws[i] * (i + 1)), i)
        order[i], order[j] = order[j], order[i]
    return order


def batches(data, batch_size: int, seed: int | np.random.Generator = 0, shuffle: bool = True) -> Iterator[np.ndarray]:
    """Yield index arrays of at most ``batch_size``; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(data)
    if shuffle:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        order = shuffled_indices(n, rng)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def merge(original: ImageSet, generated: ImageSet, generated_labels=None) -> ImageSet:
    """Concatenate a generated set onto the originals, keeping per-example source tags."""
    if generated_labels is None:
        generated_labels = generated.labels
    if len(generated) == 0:
        return original
    if generated_labels is None:
        raise ValueError("generated images need labels to be merged")
    if original.labels is None:
        raise ValueError("original set has no labels")
    gen_labels = np.asarray(generated_labels, dtype=np.int64)
    if len(gen_labels) != len(generated):
        raise DimensionMismatchError("one label per generated image required")
    return ImageSet(
        np.concatenate([original.images, generated.images]),
        np.concatenate([original.labels, gen_labels]),
        np.concatenate([original.sources, generated.sources]),
    )
