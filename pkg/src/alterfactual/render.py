"""Presentation helpers: explanation grids and original-to-explanation interpolation strips."""
from __future__ import annotations

import numpy as np

from .io import save_png, tile


def interpolation_frames(x, x_hat, steps: int) -> np.ndarray:
    """Frames ``x + t (x_hat - x)`` for ``t = k / (steps - 1)``.

    Computed in float64 so the first frame is exactly ``x``, the last exactly
    ``x_hat`` and every pixel moves monotonically between them.
    """
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError("x and x_hat differ in shape")
    t = np.arange(steps, dtype=np.float64) / (steps - 1)
    delta = x_hat - x
    frames = x[None] + t.reshape((-1,) + (1,) * x.ndim) * delta[None]
    frames[-1] = x_hat
    return frames


def save_strip(path, x_hwc, x_hat_hwc, steps: int) -> np.ndarray:
    frames = interpolation_frames(x_hwc, x_hat_hwc, steps)
    save_png(path, tile(frames, ncols=steps))
    return frames


def save_grid(path, originals_hwc, explanations_hwc) -> None:
    """Originals on the top row, explanations below."""
    originals_hwc = np.asarray(originals_hwc)
    rows = np.concatenate([originals_hwc, np.asarray(explanations_hwc)])
    save_png(path, tile(rows, ncols=len(originals_hwc)))
