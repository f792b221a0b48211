"""
How the similarity score behaves
================================

Alterfactuals are pushed towards low SSIM, counterfactuals towards high SSIM.
This script shows what the score does on a real shoe under a few edits.
"""
import numpy as np

from alterfactual.data import load_binary_subset
from alterfactual.metrics import ssim

boots = load_binary_subset("fashion_mnist", "ankle_boot", "sneaker", "test")
x = boots.images[0, ..., 0]  # 128x128 in [-1, 1]
rng = np.random.default_rng(0)

edits = {
    "identical": x,
    "mild noise": np.clip(x + rng.normal(0, 0.1, x.shape), -1, 1),
    "strong noise": np.clip(x + rng.normal(0, 0.6, x.shape), -1, 1),
    "brightened": np.clip(x + 0.3, -1, 1),
    "inverted": -x,
    "another shoe": boots.images[1, ..., 0],
    "flat grey": np.zeros_like(x),
}
for name, y in edits.items():
    print(f"{name:>13}: ssim = {ssim(x, y):.3f}")

# local SSIM values below zero are floored, so the score never goes negative
print("score of the inverted image is non-negative:", ssim(x, -x) >= 0)
