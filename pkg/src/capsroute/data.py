"""Dataset readers (MNIST IDX, CIFAR-10 binary), MultiMNIST synthesis, augmentation."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "DataFormatError",
    "DataNotFoundError",
    "read_idx",
    "write_idx",
    "load_mnist",
    "load_cifar10",
    "write_cifar_batch",
    "synthesize_multimnist",
    "multimnist_plan",
    "render_multimnist",
    "load_multimnist",
    "load_dataset",
    "random_shift",
    "center_crop",
    "random_crop",
    "random_flip",
    "default_data_dir",
]

IDX_IMAGE_MAGIC = 0x00000803  # 2051
IDX_LABEL_MAGIC = 0x00000801  # 2049
CIFAR_RECORD = 1 + 3 * 32 * 32  # 3073 bytes

_IDX_DTYPES = {0x08: np.dtype("u1"), 0x09: np.dtype("i1"), 0x0B: np.dtype(">i2"),
               0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}
_IDX_CODES = {np.dtype("u1"): 0x08, np.dtype("i1"): 0x09}


class DataFormatError(ValueError):
    pass


class DataNotFoundError(FileNotFoundError):
    pass


@dataclass
class Dataset:
    """Images ``[N, C, H, W]`` in [0, 1] with one or two class labels each.

    ``labels`` is ``[N]`` for single-label data and ``[N, 2]`` for MultiMNIST.
    """

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 10
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataFormatError(f"images must be [N, C, H, W], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.images) == 0:
            raise DataFormatError("dataset is empty")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise DataFormatError("pixel values must lie in [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataFormatError(f"labels must lie in [0, {self.num_classes})")
        if self.labels.ndim == 2:
            ordered = np.sort(self.labels, axis=1)
            if np.any(ordered[:, 1:] == ordered[:, :-1]):
                raise DataFormatError("multi-label items need distinct classes")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def multi_label(self) -> bool:
        return self.labels.ndim == 2

    def label_sets(self) -> list[frozenset]:
        rows = self.labels[:, None] if not self.multi_label else self.labels
        return [frozenset(int(v) for v in row) for row in rows]

    def targets(self) -> np.ndarray:
        """Indicator matrix ``[N, K]`` with ones at the positive classes."""
        t = np.zeros((len(self), self.num_classes))
        rows = np.arange(len(self))
        if self.multi_label:
            for col in range(self.labels.shape[1]):
                t[rows, self.labels[:, col]] = 1.0
        else:
            t[rows, self.labels] = 1.0
        return t

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], self.split, self.num_classes, self.name)

    def stratified_subset(self, n: int) -> "Dataset":
        """First ``n // K`` examples of each class (by primary label), in file order."""
        if n <= 0 or n >= len(self):
            return self
        primary = self.labels if not self.multi_label else self.labels[:, 0]
        per = max(1, n // self.num_classes)
        keep = np.concatenate([np.flatnonzero(primary == k)[:per] for k in range(self.num_classes)])
        return self.take(np.sort(keep))


# IDX -------------------------------------------------------------------------

def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path: str | Path, expected_magic: int | None = None) -> np.ndarray:
    """Decode an IDX file (optionally gzip-compressed) into an array."""
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    magic = struct.unpack(">I", raw[:4])[0]
    if zero != 0 or code not in _IDX_DTYPES:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}")
    if expected_magic is not None and magic != expected_magic:
        raise DataFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_DTYPES[code]
    need = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header < need:
        raise DataFormatError(f"{path}: truncated, {len(raw) - header} of {need} data bytes present")
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)


def write_idx(path: str | Path, array: np.ndarray) -> Path:
    array = np.asarray(array)
    if array.dtype not in _IDX_CODES:
        raise DataFormatError(f"unsupported IDX dtype {array.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = struct.pack(">HBB", 0, _IDX_CODES[array.dtype], array.ndim)
    head += struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(array).tobytes())
    return path


_MNIST_STEMS = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(root: Path, stem: str) -> Path:
    candidates = [stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"]
    for sub in (root, root / "mnist", root / "MNIST" / "raw"):
        for name in candidates:
            if (sub / name).is_file():
                return sub / name
    raise DataNotFoundError(f"{stem} not found under {root}")


def load_mnist(path: str | Path, split: str = "train") -> Dataset:
    """Read an MNIST split from a directory of IDX files; pixels scaled by 1/255."""
    if split not in _MNIST_STEMS:
        raise ValueError("split must be 'train' or 'test'")
    root = Path(path)
    img_stem, lbl_stem = _MNIST_STEMS[split]
    images = read_idx(_find(root, img_stem), IDX_IMAGE_MAGIC)
    labels = read_idx(_find(root, lbl_stem), IDX_LABEL_MAGIC)
    if images.ndim != 3 or labels.ndim != 1:
        raise DataFormatError("unexpected MNIST array ranks")
    if len(images) != len(labels):
        raise DataFormatError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    return Dataset(images[:, None].astype(np.float64) / 255.0, labels.astype(np.int64), split, 10, "mnist")


# CIFAR-10 ---------------------------------------------------------------------

_CIFAR_FILES = {"train": [f"data_batch_{k}.bin" for k in range(1, 6)], "test": ["test_batch.bin"]}


def _decode_cifar(raw: bytes, source: str) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) % CIFAR_RECORD:
        raise DataFormatError(f"{source}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        raise DataFormatError(f"{source}: label byte out of range")
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def load_cifar10(path: str | Path, split: str = "train") -> Dataset:
    """Read CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record)."""
    if split not in _CIFAR_FILES:
        raise ValueError("split must be 'train' or 'test'")
    root = Path(path)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    imgs, lbls = [], []
    for name in _CIFAR_FILES[split]:
        f = root / name
        if not f.is_file():
            raise DataNotFoundError(f"{name} not found under {root}")
        i, l = _decode_cifar(f.read_bytes(), str(f))
        imgs.append(i)
        lbls.append(l)
    images = np.concatenate(imgs).astype(np.float64) / 255.0
    return Dataset(images, np.concatenate(lbls), split, 10, "cifar10")


def write_cifar_batch(path: str | Path, images: np.ndarray, labels: np.ndarray) -> Path:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    if images.shape[1] != CIFAR_RECORD - 1:
        raise DataFormatError("CIFAR records need 3x32x32 pixels")
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(rec.tobytes())
    return path


# MultiMNIST -------------------------------------------------------------------

def multimnist_plan(labels: np.ndarray, per_image: int, seed: int, max_shift: int = 4) -> np.ndarray:
    """Draw partners and shifts; one row ``(base, partner, dy1, dx1, dy2, dx2)`` per item.

    Each base image is paired ``per_image`` times with a partner of a
    different class chosen uniformly at random.
    """
    if per_image < 1:
        raise ValueError("per_image must be >= 1")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    n = len(labels)
    base = np.repeat(np.arange(n), per_image)
    partner = np.empty_like(base)
    by_class = {k: np.flatnonzero(labels != k) for k in np.unique(labels)}
    for k, pool in by_class.items():
        if len(pool) == 0:
            raise ValueError("MultiMNIST needs at least two classes")
        sel = labels[base] == k
        partner[sel] = pool[rng.integers(0, len(pool), size=int(sel.sum()))]
    shifts = rng.integers(-max_shift, max_shift + 1, size=(len(base), 4))
    return np.column_stack([base, partner, shifts])


def render_multimnist(images: np.ndarray, plan: np.ndarray, canvas: int = 36, max_shift: int = 4) -> np.ndarray:
    """Overlay the planned digit pairs by pixelwise max; returns ``[B, canvas, canvas]``."""
    size = images.shape[-1]
    margin = (canvas - size) // 2
    pad = margin + max_shift
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (canvas, canvas), axis=(1, 2))
    # window offset max_shift - d moves the digit by +d
    first = windows[plan[:, 0], max_shift - plan[:, 2], max_shift - plan[:, 3]]
    second = windows[plan[:, 1], max_shift - plan[:, 4], max_shift - plan[:, 5]]
    return np.maximum(first, second)


def synthesize_multimnist(mnist: Dataset, per_image: int = 20, seed: int = 0,
                          canvas: int = 36, max_shift: int = 4) -> Dataset:
    """Two-digit images: each digit shifted up to ``max_shift`` px, merged by max."""
    plan = multimnist_plan(mnist.labels, per_image, seed, max_shift)
    imgs = render_multimnist(mnist.images[:, 0], plan, canvas, max_shift)
    labels = np.column_stack([mnist.labels[plan[:, 0]], mnist.labels[plan[:, 1]]])
    return Dataset(imgs[:, None], labels, mnist.split, 10, "multimnist")


def load_multimnist(path: str | Path, split: str = "test") -> Dataset:
    """Read MultiMNIST IDX files written by ``capsroute synth-multimnist``."""
    root = Path(path)
    img = _find(root, f"multimnist-{split}-images-idx3-ubyte")
    lbl = _find(root, f"multimnist-{split}-labels-idx2-ubyte")
    images = read_idx(img, IDX_IMAGE_MAGIC)
    labels = read_idx(lbl, 0x00000802)
    if len(images) != len(labels):
        raise DataFormatError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    return Dataset(images[:, None].astype(np.float64) / 255.0, labels.astype(np.int64), split, 10, "multimnist")


def default_data_dir() -> Path:
    return Path(os.environ.get("CAPSROUTE_DATA_DIR", "data"))


def load_dataset(name: str, split: str, data_dir: str | Path | None = None) -> Dataset:
    """``name`` is ``mnist``, ``cifar10`` or ``multimnist``; a ``-train``/``-test`` suffix overrides ``split``."""
    for suffix in ("-train", "-test"):
        if name.endswith(suffix):
            name, split = name[: -len(suffix)], suffix[1:]
    root = Path(data_dir) if data_dir else default_data_dir()
    if not root.exists():
        raise DataNotFoundError(f"data directory {root} does not exist")
    if name == "mnist":
        return load_mnist(root, split)
    if name in ("cifar10", "cifar-10"):
        return load_cifar10(root / "cifar10" if (root / "cifar10").is_dir() else root, split)
    if name == "multimnist":
        return load_multimnist(root / "multimnist" if (root / "multimnist").is_dir() else root, split)
    raise ValueError(f"unknown dataset {name!r}")


# augmentation -----------------------------------------------------------------

def random_shift(images: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Translate each image by up to ``max_shift`` px per axis, filling with zeros."""
    if max_shift <= 0:
        return images
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (max_shift, max_shift), (max_shift, max_shift)))
    dy = rng.integers(0, 2 * max_shift + 1, size=n)
    dx = rng.integers(0, 2 * max_shift + 1, size=n)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (h, w), axis=(2, 3))
    return np.ascontiguousarray(windows[np.arange(n), :, dy, dx])


def center_crop(images: np.ndarray, size: int) -> np.ndarray:
    h, w = images.shape[-2:]
    if size <= 0 or size == h:
        return images
    top, left = (h - size) // 2, (w - size) // 2
    return np.ascontiguousarray(images[..., top : top + size, left : left + size])


def random_crop(images: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    n, c, h, w = images.shape
    if size <= 0 or size == h:
        return images
    top = rng.integers(0, h - size + 1, size=n)
    left = rng.integers(0, w - size + 1, size=n)
    windows = np.lib.stride_tricks.sliding_window_view(images, (size, size), axis=(2, 3))
    return np.ascontiguousarray(windows[np.arange(n), :, top, left])


def random_flip(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    flip = rng.random(len(images)) < 0.5
    out = images.copy()
    out[flip] = out[flip][..., ::-1]
    return out
