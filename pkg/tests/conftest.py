import os

import numpy as np
import pytest
import torch
import torch.nn as nn

from alterfactual.classifier import TrainedClassifier
from alterfactual.data import DEFAULT_CACHE_DIR, write_idx

torch.set_num_threads(1)


class ToyClassifierNet(nn.Module):
    """Two-layer stand-in for the real classifier: conv -> GAP features -> linear head."""

    def __init__(self, in_channels=1, width=4, smooth=True):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.Softplus() if smooth else nn.ReLU(),
            nn.Conv2d(width, width, 3, padding=1),
            nn.Softplus() if smooth else nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.head = nn.Linear(width, 2)

    def features(self, x):
        return self.body(x)

    def forward(self, x):
        return self.head(self.features(x))


def make_toy_classifier(resolution=8, seed=0, dtype=torch.float64, width=4):
    torch.manual_seed(seed)
    net = ToyClassifierNet(width=width).to(dtype)
    return TrainedClassifier(net, resolution, preprocess=None).freeze()


@pytest.fixture
def toy_classifier():
    return make_toy_classifier()


def _fake_idx_dataset(root, n_per_class=5, size=28, seed=0):
    """Ten classes, class k images filled with value 20*k plus noise."""
    rng = np.random.default_rng(seed)
    for prefix, n in (("train", n_per_class), ("t10k", max(1, n_per_class // 2))):
        labels = np.repeat(np.arange(10), n).astype(np.uint8)
        rng.shuffle(labels)
        images = np.clip(labels[:, None, None] * 20 + rng.integers(0, 20, (len(labels), size, size)), 0, 255)
        write_idx(root / f"{prefix}-images-idx3-ubyte", images.astype(np.uint8))
        write_idx(root / f"{prefix}-labels-idx1-ubyte", labels)


@pytest.fixture
def fake_cache(tmp_path):
    for name in ("fashion_mnist", "mnist"):
        (tmp_path / name).mkdir()
        _fake_idx_dataset(tmp_path / name)
    return tmp_path


def real_dataset_available(name):
    return (DEFAULT_CACHE_DIR / name / "train-images-idx3-ubyte").exists() or (
        DEFAULT_CACHE_DIR / name / "train-images-idx3-ubyte.gz"
    ).exists()


requires_fashion = pytest.mark.skipif(
    not real_dataset_available("fashion_mnist"), reason="Fashion-MNIST not in the local cache"
)
requires_mnist = pytest.mark.skipif(not real_dataset_available("mnist"), reason="MNIST not in the local cache")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
