"""Atomic file output: write to a sibling temp file, then rename."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def _atomic(path, write, mode="wb"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    _atomic(path, lambda fh: fh.write(data))


def atomic_write_text(path, text: str) -> None:
    _atomic(path, lambda fh: fh.write(text), mode="w")


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def atomic_torch_save(obj, path) -> None:
    import torch

    _atomic(path, lambda fh: torch.save(obj, fh))


def to_uint8(images) -> np.ndarray:
    """[-1, 1] float images -> uint8."""
    arr = np.asarray(images, dtype=np.float64)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def save_png(path, image_hwc) -> None:
    """Save a ``(H, W, C)`` image in [-1, 1] as PNG."""
    from PIL import Image

    arr = to_uint8(image_hwc)
    arr = arr[..., 0] if arr.shape[-1] == 1 else arr

    def write(fh):
        Image.fromarray(arr).save(fh, format="PNG")

    _atomic(path, write)


def tile(images, ncols: int, pad: int = 2, fill: float = 1.0) -> np.ndarray:
    """Arrange ``(N, H, W, C)`` images into one grid image."""
    images = np.asarray(images)
    n, h, w, c = images.shape
    nrows = -(-n // ncols)
    grid = np.full((nrows * (h + pad) + pad, ncols * (w + pad) + pad, c), fill, dtype=images.dtype)
    for i, im in enumerate(images):
        r, k = divmod(i, ncols)
        grid[pad + r * (h + pad): pad + r * (h + pad) + h, pad + k * (w + pad): pad + k * (w + pad) + w] = im
    return grid
