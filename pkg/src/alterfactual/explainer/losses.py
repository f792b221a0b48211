"""Generator and discriminator objectives.

All images are ``(N, C, H, W)`` tensors in [-1, 1]; the classifier sees them
through the differentiable ``(v + 1) / 2`` mapping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from ..classifier import TrainingError
from ..data import to_unit_range
from ..metrics import SsimSpec, ssim_per_image, target_class

EPS = 1e-7
COMPONENTS = ("adversarial", "classification", "similarity", "boundary")


def _safe_log(p):
    return torch.log(p.clamp(EPS, 1.0 - EPS))


def real_term(D, x_real, y_real):
    """``-log D(x, y)`` averaged over patches."""
    return -_safe_log(D(x_real, y_real)).mean()


def fake_term(D, x_fake, y_fake):
    """``-log(1 - D(G(x, z), y))`` averaged over patches; no gradient reaches the generator."""
    return -_safe_log(1.0 - D(x_fake.detach(), y_fake)).mean()


def discriminator_terms(D, x_real, x_fake, y_real, y_fake):
    return real_term(D, x_real, y_real), fake_term(D, x_fake, y_fake)


def generator_adversarial_loss(D, x_fake, y_fake):
    """Non-saturating generator term ``-log D(G(x, z), y)``."""
    return -_safe_log(D(x_fake, y_fake)).mean()


def adversarial_losses(D, x_real, x_fake, y_real, y_fake):
    """Return ``(loss_D, loss_G_adv)``.

    ``y_real`` is the classifier's decision on ``x_real``; ``y_fake`` the
    target class of the explanation.
    """
    real, fake = discriminator_terms(D, x_real, x_fake, y_real, y_fake)
    return real + fake, generator_adversarial_loss(D, x_fake, y_fake)


@torch.no_grad()
def classifier_decision(clf, x) -> torch.Tensor:
    p1 = clf.probabilities(to_unit_range(x))[:, 1]
    return (p1 >= 0.5).long()


def classification_loss(clf, x, x_hat, mode: str, target=None):
    """Binary cross-entropy between the classifier's class-1 probability on
    ``x_hat`` and the target class of ``x`` (same class for alterfactuals,
    the opposite one for counterfactuals)."""
    if target is None:
        target = target_class(classifier_decision(clf, x), mode)
    target = torch.as_tensor(target, dtype=x_hat.dtype).reshape(-1)
    p1 = clf.probabilities(to_unit_range(x_hat))[:, 1]
    if not torch.isfinite(p1).all():
        raise TrainingError("classifier produced non-finite output")
    return -(target * _safe_log(p1) + (1 - target) * _safe_log(1 - p1)).mean()


def similarity_loss(x, x_hat, mode: str, spec: SsimSpec = SsimSpec()):
    """SSIM for alterfactuals (similarity is penalised), ``1 - SSIM`` for counterfactuals."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    s = ssim_per_image(x, x_hat, spec)
    if mode == "alterfactual":
        return s.mean()
    if mode == "counterfactual":
        return (1.0 - s).mean()
    raise ValueError(f"unknown mode {mode!r}")


def boundary_loss(clf, surr, x, x_hat):
    """``|SVM(x) - SVM(x_hat)|``: change in distance to the surrogate hyperplane.

    The original's distance is treated as a constant.
    """
    if surr.dim != clf.feature_dim:
        raise ValueError(f"surrogate dimension {surr.dim} does not match classifier features {clf.feature_dim}")
    with torch.no_grad():
        d_orig = surr.distance(clf.features(to_unit_range(x)))
    d_hat = surr.distance(clf.features(to_unit_range(x_hat)))
    return (d_orig.to(d_hat.dtype) - d_hat).abs().mean()


@dataclass(frozen=True)
class LossWeights:
    adversarial: float = 1.0
    classification: float = 1.0
    similarity: float = 1.0
    boundary: float = 1.0

    def __post_init__(self):
        if any(v < 0 for v in self.as_tuple()):
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self):
        return (self.adversarial, self.classification, self.similarity, self.boundary)


def total_generator_loss(components: dict, weights: LossWeights = LossWeights(), mode: str = "alterfactual"):
    """Weighted sum of the loss components; the boundary term only counts for alterfactuals."""
    total = 0.0
    for name, weight in zip(COMPONENTS, weights.as_tuple()):
        if name == "boundary" and mode != "alterfactual":
            continue
        value = components.get(name)
        if value is None:
            if weight and name != "boundary":
                raise KeyError(f"missing loss component {name!r}")
            continue
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise TrainingError(f"loss component {name!r} is not finite ({v})")
        if weight:
            total = total + weight * value
    return total
