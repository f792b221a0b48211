"""Dataset ingestion: IDX readers, two-class subsets and image preprocessing.

Images handed to the rest of the pipeline are float32 arrays of shape
``(N, H, W, C)`` with values in ``[-1, 1]``.
"""
from __future__ import annotations

import gzip
import logging
import os
import shutil
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

FASHION_MNIST_CLASSES = (
    "t_shirt", "trouser", "pullover", "dress", "coat",
    "sandal", "shirt", "sneaker", "bag", "ankle_boot",
)
MNIST_CLASSES = tuple(str(i) for i in range(10))

_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

MIRRORS = {
    "fashion_mnist": ["http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"],
    "mnist": ["https://ossci-datasets.s3.amazonaws.com/mnist/"],
}

DEFAULT_CACHE_DIR = Path(os.environ.get("ALTERFACTUAL_CACHE", Path.home() / ".cache" / "alterfactual"))


class DatasetUnavailableError(RuntimeError):
    """Raised when dataset files are neither cached nor downloadable."""


@dataclass(frozen=True)
class PreprocessSpec:
    target_resolution: int = 128
    resize_filter: str = "bilinear"
    # number of stride-2 layers the image has to survive (generator encoder depth)
    min_downsamplings: int = 7

    def __post_init__(self):
        r = self.target_resolution
        if r <= 0 or r & (r - 1):
            raise ValueError(f"target_resolution must be a power of two, got {r}")
        if r < 2 ** self.min_downsamplings:
            raise ValueError(
                f"target_resolution {r} < 2**{self.min_downsamplings}; encoder bottleneck cannot reach 1x1"
            )
        if self.resize_filter not in ("bilinear", "nearest"):
            raise ValueError(f"unknown resize_filter {self.resize_filter!r}")


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (N, H, W, C) float32 in [-1, 1]
    labels: np.ndarray  # (N,) int64 in {0, 1}
    split: str
    class_names: tuple[str, str]

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if len(self.labels) and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if self.images.size and (self.images.min() < -1.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_counts(self) -> dict[str, int]:
        return {name: int((self.labels == i).sum()) for i, name in enumerate(self.class_names)}

    def subset(self, indices) -> "LabeledImageSet":
        indices = np.asarray(indices)
        return LabeledImageSet(self.images[indices], self.labels[indices], self.split, self.class_names)

    def to_tensor(self) -> torch.Tensor:
        """Images as an ``(N, C, H, W)`` tensor, still in [-1, 1]."""
        return torch.from_numpy(np.ascontiguousarray(self.images.transpose(0, 3, 1, 2)))


# -- IDX format -------------------------------------------------------------

def _open_maybe_gz(path: Path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped) holding unsigned bytes."""
    with _open_maybe_gz(Path(path)) as fh:
        magic = struct.unpack(">I", fh.read(4))[0]
        if magic >> 8 != 0x08:
            raise ValueError(f"{path}: unsupported IDX magic 0x{magic:08x}")
        ndim = magic & 0xFF
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {np.prod(dims)} values, found {data.size}")
    return data.reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def _find_idx(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    return None


def _fetch(dataset_id: str, directory: Path, stem: str) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    errors = []
    for base in MIRRORS[dataset_id]:
        url = base + stem + ".gz"
        target = directory / (stem + ".gz")
        try:
            logger.info("downloading %s", url)
            with urllib.request.urlopen(url, timeout=30) as resp, open(str(target) + ".part", "wb") as out:
                shutil.copyfileobj(resp, out)
            os.replace(str(target) + ".part", target)
            return target
        except OSError as exc:
            errors.append(f"{url}: {exc}")
    raise DatasetUnavailableError(
        f"{stem} not found in {directory} and could not be downloaded ({'; '.join(errors)})"
    )


def load_idx_split(dataset_id: str, split: str, cache_dir=None, download: bool = True):
    directory = Path(cache_dir or DEFAULT_CACHE_DIR) / dataset_id
    out = []
    for stem in _IDX_FILES[split]:
        path = _find_idx(directory, stem)
        if path is None:
            if not download:
                raise DatasetUnavailableError(f"{stem} not found in {directory}")
            path = _fetch(dataset_id, directory, stem)
        out.append(read_idx(path))
    images, labels = out
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ValueError(f"{dataset_id}/{split}: malformed IDX pair")
    return images, labels


# -- preprocessing ------------------------------------------------------------

def resize(images: torch.Tensor, size: int, resize_filter: str = "bilinear") -> torch.Tensor:
    """Resize an ``(N, C, H, W)`` tensor to ``size x size``."""
    if images.shape[-2:] == (size, size):
        return images
    if resize_filter == "nearest":
        return F.interpolate(images, size=(size, size), mode="nearest")
    return F.interpolate(images, size=(size, size), mode="bilinear", align_corners=False, antialias=False)


def preprocess(raw_image: np.ndarray, spec: PreprocessSpec = PreprocessSpec()) -> np.ndarray:
    """Map a uint8 image (H, W) or (H, W, C) to float32 in [-1, 1] at the target resolution."""
    raw = np.asarray(raw_image)
    batch = preprocess_batch(raw[None], spec)
    return batch[0]


def preprocess_batch(raw_images: np.ndarray, spec: PreprocessSpec = PreprocessSpec(), chunk: int = 1024) -> np.ndarray:
    raw = np.asarray(raw_images)
    if raw.ndim == 3:
        raw = raw[..., None]
    if raw.ndim != 4:
        raise ValueError(f"expected (N, H, W[, C]) images, got shape {raw_images.shape}")
    n, h, w, c = raw.shape
    if h == 0 or w == 0:
        raise ValueError("empty image")
    if h != w:
        raise ValueError(f"images must be square, got {h}x{w}")
    if raw.min(initial=0) < 0 or raw.max(initial=0) > 255:
        raise ValueError("raw pixel values must lie in [0, 255]")
    res = spec.target_resolution
    out = np.empty((n, res, res, c), dtype=np.float32)
    for start in range(0, n, chunk):
        block = torch.from_numpy(raw[start:start + chunk].astype(np.float32)).permute(0, 3, 1, 2)
        block = block / 127.5 - 1.0
        block = resize(block, res, spec.resize_filter).clamp_(-1.0, 1.0)
        out[start:start + chunk] = block.permute(0, 2, 3, 1).numpy()
    return out


# -- binary subsets ----------------------------------------------------------

def _resolve_class(class_id, names: Sequence[str]) -> int:
    if isinstance(class_id, (int, np.integer)) and not isinstance(class_id, bool):
        if 0 <= class_id < len(names):
            return int(class_id)
    elif isinstance(class_id, str):
        key = class_id.strip().lower().replace("-", "_").replace(" ", "_")
        if key in names:
            return names.index(key)
        if key.isdigit() and int(key) < len(names):
            return int(key)
    raise ValueError(f"unknown class id {class_id!r}; expected one of {list(names)}")


def _load_custom_dir(root: Path, class_a: str, class_b: str, split: str):
    from PIL import Image

    images, labels = [], []
    for label, name in enumerate((class_a, class_b)):
        folder = root / split / name
        if not folder.is_dir():
            raise DatasetUnavailableError(f"missing class folder {folder}")
        files = sorted(p for p in folder.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        for p in files:
            with Image.open(p) as im:
                im = im.convert("L") if im.mode in ("L", "LA", "I", "P", "1") else im.convert("RGB")
                images.append(np.asarray(im))
        labels += [label] * len(files)
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ValueError(f"custom_dir images differ in shape: {sorted(shapes)}")
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def load_binary_subset(
    dataset_id: str,
    class_a,
    class_b,
    split: str,
    cache_dir=None,
    spec: PreprocessSpec | None = PreprocessSpec(),
    download: bool = True,
) -> LabeledImageSet:
    """Load the two-class subset of a dataset split.

    ``class_a`` becomes label 0 and ``class_b`` label 1. With ``spec=None``
    the images keep their native resolution (still mapped to [-1, 1]).
    For ``custom_dir`` the ``cache_dir`` is the dataset root laid out as
    ``<root>/<split>/<class_name>/*.png``.
    """
    if split not in _IDX_FILES:
        raise ValueError(f"unknown split {split!r}")
    if dataset_id in ("fashion_mnist", "mnist"):
        names = FASHION_MNIST_CLASSES if dataset_id == "fashion_mnist" else MNIST_CLASSES
        a, b = _resolve_class(class_a, names), _resolve_class(class_b, names)
        if a == b:
            raise ValueError(f"class_a and class_b must differ, both are {names[a]!r}")
        raw, raw_labels = load_idx_split(dataset_id, split, cache_dir, download)
        keep = (raw_labels == a) | (raw_labels == b)
        raw, labels = raw[keep], (raw_labels[keep] == b).astype(np.int64)
        class_names = (names[a], names[b])
    elif dataset_id == "custom_dir":
        if str(class_a) == str(class_b):
            raise ValueError("class_a and class_b must differ")
        if cache_dir is None:
            raise ValueError("custom_dir requires the dataset root as cache_dir")
        raw, labels = _load_custom_dir(Path(cache_dir), str(class_a), str(class_b), split)
        class_names = (str(class_a), str(class_b))
    else:
        raise ValueError(f"unknown dataset_id {dataset_id!r}")

    if spec is None:
        images = raw.astype(np.float32) / 127.5 - 1.0
        if images.ndim == 3:
            images = images[..., None]
    else:
        images = preprocess_batch(raw, spec)
    return LabeledImageSet(images, labels, split, class_names)


def to_unit_range(images):
    """[-1, 1] -> [0, 1]; works on tensors and arrays (differentiable for tensors)."""
    return (images + 1.0) / 2.0
