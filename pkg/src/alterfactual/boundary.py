"""Linear SVM surrogate of the classifier's decision boundary in feature space.

The surrogate is fit on standardized penultimate-layer features against the
classifier's own decisions, and its point-to-hyperplane distance
``|w . z + b| / ||w||`` (``z`` the standardized feature) is the stand-in for
the distance to the classifier's decision boundary.
"""
from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .io import atomic_write_bytes

SURROGATE_FORMAT = "alterfactual.surrogate/1"


class DegenerateFitError(ValueError):
    """The surrogate cannot be fit, e.g. because only one decision value occurs."""


@dataclass(frozen=True)
class SvmConfig:
    C: float = 10.0
    max_iterations: int = 5000
    holdout_fraction: float = 0.1
    seed: int = 0


@dataclass
class HyperplaneSurrogate:
    w: np.ndarray
    b: float
    mean: np.ndarray
    std: np.ndarray
    fit_report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        self.b = float(self.b)
        if not np.linalg.norm(self.w) > 0:
            raise DegenerateFitError("hyperplane weight vector is zero")
        if self.mean.shape != self.w.shape or self.std.shape != self.w.shape:
            raise ValueError("standardizer does not match weight dimension")
        if (self.std <= 0).any():
            raise ValueError("standardizer std must be positive")

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def _check_dim(self, features):
        if features.shape[-1] != self.dim:
            raise ValueError(f"feature dimension {features.shape[-1]} does not match surrogate dimension {self.dim}")

    def decision_function(self, features):
        """Signed ``w . standardize(x) + b``; torch tensors stay differentiable."""
        self._check_dim(features)
        if isinstance(features, torch.Tensor):
            kw = dict(dtype=features.dtype, device=features.device)
            z = (features - torch.as_tensor(self.mean, **kw)) / torch.as_tensor(self.std, **kw)
            return z @ torch.as_tensor(self.w, **kw) + self.b
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.std
        return z @ self.w + self.b

    def distance(self, features):
        f = self.decision_function(features)
        norm = float(np.linalg.norm(self.w))
        return f.abs() / norm if isinstance(f, torch.Tensor) else np.abs(f) / norm

    def predict(self, features) -> np.ndarray:
        """Surrogate decision; points exactly on the hyperplane go to class 1."""
        f = self.decision_function(features)
        f = f.detach().cpu().numpy() if isinstance(f, torch.Tensor) else f
        return (np.asarray(f) >= 0).astype(np.int64)

    def scaled(self, c: float) -> "HyperplaneSurrogate":
        """Same hyperplane with ``(w, b)`` multiplied by ``c > 0``."""
        if not c > 0:
            raise ValueError("scale must be positive")
        return HyperplaneSurrogate(self.w * c, self.b * c, self.mean, self.std, dict(self.fit_report))

    def save(self, path) -> None:
        buf = io.BytesIO()
        np.savez(
            buf, format=np.array(SURROGATE_FORMAT), w=self.w, b=np.array(self.b),
            mean=self.mean, std=self.std, fit_report=np.array(json.dumps(self.fit_report)),
        )
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path) -> "HyperplaneSurrogate":
        with open(path, "rb") as fh, np.load(fh) as blob:
            if str(blob["format"]) != SURROGATE_FORMAT:
                raise ValueError(f"{path}: not a surrogate file")
            return cls(blob["w"], float(blob["b"]), blob["mean"], blob["std"], json.loads(str(blob["fit_report"])))


def hyperplane_distance(surr: HyperplaneSurrogate, feature):
    """Unsigned distance of feature vector(s) to the surrogate hyperplane."""
    return surr.distance(feature)


def fit_standardizer(features: np.ndarray):
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[~(std > 0)] = 1.0
    return mean, std


def fit_surrogate(features, classifier_decisions, cfg: SvmConfig = SvmConfig()) -> HyperplaneSurrogate:
    """Fit a hinge-loss, L2-regularised linear SVM to the classifier's decisions.

    A seeded ``holdout_fraction`` slice is kept out of fitting and used to
    measure agreement with the classifier (``fit_report["holdout_agreement"]``).
    """
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.svm import LinearSVC

    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(classifier_decisions).astype(np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be (N, D) with one decision per row")
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise DegenerateFitError("surrogate needs both decision values among at least two samples")

    perm = np.random.default_rng(cfg.seed).permutation(len(y))
    n_hold = int(round(cfg.holdout_fraction * len(y)))
    hold, fit = perm[:n_hold], perm[n_hold:]
    if len(np.unique(y[fit])) < 2:
        fit, hold = perm, perm[:0]

    mean, std = fit_standardizer(x[fit])
    svm = LinearSVC(C=cfg.C, loss="hinge", dual=True, max_iter=cfg.max_iterations, random_state=cfg.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        svm.fit((x[fit] - mean) / std, y[fit])
    converged = not any(issubclass(w.category, ConvergenceWarning) for w in caught)

    surr = HyperplaneSurrogate(svm.coef_[0], svm.intercept_[0], mean, std)
    report = {
        "n_fit": int(len(fit)),
        "n_holdout": int(len(hold)),
        "fit_agreement": float((surr.predict(x[fit]) == y[fit]).mean()),
        "holdout_agreement": float((surr.predict(x[hold]) == y[hold]).mean()) if len(hold) else None,
        "converged": converged,
        "C": cfg.C,
        "max_iterations": cfg.max_iterations,
    }
    surr.fit_report = report
    return surr
