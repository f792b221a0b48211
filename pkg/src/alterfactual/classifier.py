"""The binary CNN being explained.

Inputs are ``(N, C, H, W)`` tensors in ``[0, 1]``. Use
:func:`alterfactual.data.to_unit_range` to go from the GAN's ``[-1, 1]``
domain; that conversion is differentiable, so generator outputs can be
scored directly.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import LabeledImageSet, PreprocessSpec, to_unit_range
from .io import atomic_torch_save

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "alterfactual.classifier/1"


class TrainingError(RuntimeError):
    """Raised when an optimisation produces non-finite values."""


@dataclass
class ClassifierConfig:
    batch_size: int = 32
    epochs: int = 40
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "epochs", "learning_rate", "beta2", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"classifier.{name} must be positive, got {getattr(self, name)}")


def _conv_block(cin, cout):
    return [nn.Conv2d(cin, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout), nn.ReLU()]


class ClassifierNet(nn.Module):
    """Conv32-Conv32-MaxPool-Conv64-Conv64-GAP-Dense2.

    Any module exposing ``features`` (penultimate activations) and ``head``
    (features -> 2 logits) can stand in for this one.
    """

    def __init__(self, in_channels: int = 1):
        super().__init__()
        self.body = nn.Sequential(
            *_conv_block(in_channels, 32),
            *_conv_block(32, 32),
            nn.MaxPool2d(2),
            *_conv_block(32, 64),
            *_conv_block(64, 64),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.head = nn.Linear(64, 2)

    def features(self, x):
        return self.body(x)

    def forward(self, x):
        return self.head(self.features(x))


def architecture_hash(net: nn.Module) -> str:
    desc = repr(net) + "".join(f"{k}:{tuple(v.shape)}" for k, v in net.state_dict().items())
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


@dataclass
class TrainedClassifier:
    net: nn.Module
    input_resolution: int = 128
    preprocess: PreprocessSpec | None = field(default_factory=PreprocessSpec)
    frozen: bool = False
    history: dict = field(default_factory=dict)

    def freeze(self) -> "TrainedClassifier":
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.frozen = True
        return self

    @property
    def feature_dim(self) -> int:
        return self.net.head.in_features

    def _check(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[-2:] != (self.input_resolution, self.input_resolution):
            raise ValueError(
                f"expected (N, C, {self.input_resolution}, {self.input_resolution}) input, got {tuple(x.shape)}"
            )
        if not self.frozen:
            raise RuntimeError("classifier must be frozen before use")

    # Differentiable paths, no range validation: generator outputs come through here.
    def logits(self, x_unit: torch.Tensor) -> torch.Tensor:
        self._check(x_unit)
        return self.net(x_unit)

    def probabilities(self, x_unit: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x_unit), dim=1)

    def features(self, x_unit: torch.Tensor) -> torch.Tensor:
        self._check(x_unit)
        return self.net.features(x_unit)

    def save(self, path) -> None:
        atomic_torch_save({
            "format": CHECKPOINT_FORMAT,
            "arch_hash": architecture_hash(self.net),
            "in_channels": self.net.body[0].in_channels,
            "state_dict": self.net.state_dict(),
            "input_resolution": self.input_resolution,
            "preprocess": asdict(self.preprocess) if self.preprocess else None,
            "history": self.history,
        }, path)

    @classmethod
    def load(cls, path) -> "TrainedClassifier":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a classifier checkpoint")
        net = ClassifierNet(blob["in_channels"])
        if architecture_hash(net) != blob["arch_hash"]:
            raise ValueError(f"{path}: architecture hash mismatch")
        net.load_state_dict(blob["state_dict"])
        spec = PreprocessSpec(**blob["preprocess"]) if blob["preprocess"] else None
        clf = cls(net, blob["input_resolution"], spec, history=blob["history"])
        return clf.freeze()


def _as_unit_tensor(images, resolution: int) -> torch.Tensor:
    x = torch.as_tensor(images, dtype=torch.float32)
    if x.ndim == 3:  # single (C, H, W)
        x = x[None]
    if x.ndim != 4 or x.shape[-2:] != (resolution, resolution):
        raise ValueError(f"expected images at {resolution}x{resolution}, got shape {tuple(x.shape)}")
    if x.numel() and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("classifier inputs must lie in [0, 1]")
    return x


def predicted_class(probs) -> np.ndarray:
    """Argmax over the two classes; an exact 0.5 tie goes to class 1."""
    probs = np.asarray(probs)
    return (probs[..., 1] >= 0.5).astype(np.int64)


@torch.no_grad()
def predict(clf: TrainedClassifier, images, batch_size: int = 64) -> np.ndarray:
    """Class probabilities ``(N, 2)`` for ``[0, 1]`` images shaped ``(N, C, H, W)``."""
    x = _as_unit_tensor(images, clf.input_resolution)
    out = [clf.probabilities(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return torch.cat(out).numpy() if out else np.zeros((0, 2), np.float32)


def penultimate_features(clf: TrainedClassifier, images) -> torch.Tensor:
    """GAP-layer activations for ``[0, 1]`` images; keeps the autograd graph."""
    x = _as_unit_tensor(images, clf.input_resolution)
    return clf.features(x)


@torch.no_grad()
def accuracy(clf: TrainedClassifier, dataset: LabeledImageSet) -> float:
    probs = predict(clf, to_unit_range(dataset.to_tensor()))
    return float((predicted_class(probs) == dataset.labels).mean())


def train_classifier(
    train_set: LabeledImageSet,
    test_set: LabeledImageSet | None,
    cfg: ClassifierConfig = ClassifierConfig(),
    preprocess: PreprocessSpec | None = None,
    net: nn.Module | None = None,
    on_epoch_end=None,
) -> TrainedClassifier:
    """Train with Adam + cross-entropy over the two softmax outputs and freeze.

    ``on_epoch_end(epoch, loss)`` is called after every epoch, e.g. for logging.
    """
    torch.manual_seed(cfg.seed)
    resolution = train_set.shape[0]
    net = net or ClassifierNet(train_set.shape[2])
    x_all = train_set.to_tensor()  # converted to [0, 1] per batch to avoid a second full copy
    y_all = torch.from_numpy(train_set.labels)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    order_rng = torch.Generator().manual_seed(cfg.seed)
    history = {"train_loss": []}

    for epoch in range(cfg.epochs):
        net.train()
        perm = torch.randperm(len(y_all), generator=order_rng)
        total = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            opt.zero_grad()
            loss = F.cross_entropy(net(to_unit_range(x_all[idx])), y_all[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"classifier loss became non-finite in epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        epoch_loss = total / len(perm)
        history["train_loss"].append(epoch_loss)
        logger.info("classifier epoch %d/%d loss=%.4f", epoch + 1, cfg.epochs, epoch_loss)
        if on_epoch_end is not None:
            on_epoch_end(epoch, epoch_loss)

    clf = TrainedClassifier(net, resolution, preprocess).freeze()
    if test_set is not None:
        history["test_accuracy"] = accuracy(clf, test_set)
        logger.info("classifier test accuracy %.4f", history["test_accuracy"])
    if not all(math.isfinite(v) for v in history["train_loss"]):
        raise TrainingError("non-finite epoch loss")
    clf.history = history
    return clf
