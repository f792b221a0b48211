"""SSIM, explanation validity and evaluation reports."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import to_unit_range

MODES = ("alterfactual", "counterfactual")


@dataclass(frozen=True)
class SsimSpec:
    win_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.win_size < 1 or self.win_size % 2 == 0:
            raise ValueError("win_size must be a positive odd integer")
        if min(self.sigma, self.k1, self.k2, self.data_range) <= 0:
            raise ValueError("SSIM constants must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


def gaussian_window(spec: SsimSpec, dtype=torch.float64) -> torch.Tensor:
    r = spec.win_size // 2
    g = torch.exp(-torch.arange(-r, r + 1, dtype=torch.float64) ** 2 / (2 * spec.sigma ** 2))
    w2 = torch.outer(g, g)
    return (w2 / w2.sum()).to(dtype)


def _filter(img: torch.Tensor, window: torch.Tensor) -> torch.Tensor:
    c = img.shape[1]
    kernel = window.expand(c, 1, *window.shape)
    return F.conv2d(img, kernel, groups=c)


def ssim_map(x: torch.Tensor, y: torch.Tensor, spec: SsimSpec = SsimSpec()) -> torch.Tensor:
    """Local SSIM values of ``[0, 1]`` images shaped ``(N, C, H, W)`` (valid region only)."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.ndim != 4 or min(x.shape[-2:]) < spec.win_size:
        raise ValueError(f"expected (N, C, H, W) images at least {spec.win_size} pixels wide, got {tuple(x.shape)}")
    win = gaussian_window(spec, x.dtype).to(x.device)
    mu_x, mu_y = _filter(x, win), _filter(y, win)
    # products are written symmetrically so ssim(x, y) == ssim(y, x) bit for bit
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = _filter(x * x, win) - mu_xx
    var_y = _filter(y * y, win) - mu_yy
    cov = _filter(x * y, win) - mu_xy
    num = (2 * mu_xy + spec.c1) * (2 * cov + spec.c2)
    den = (mu_xx + mu_yy + spec.c1) * (var_x + var_y + spec.c2)
    return num / den


def ssim_per_image(x: torch.Tensor, y: torch.Tensor, spec: SsimSpec = SsimSpec()) -> torch.Tensor:
    """Mean clamped local SSIM per image for ``[-1, 1]`` tensors ``(N, C, H, W)``.

    Negative local values are floored at 0 so the score lies in [0, 1].
    Differentiable in both arguments.
    """
    local = ssim_map(to_unit_range(x), to_unit_range(y), spec).clamp(min=0.0)
    return local.mean(dim=(1, 2, 3)).clamp(max=1.0)


def _as_nchw(img) -> torch.Tensor:
    if isinstance(img, torch.Tensor):
        t = img.detach().to(torch.float64)
        return t[None] if t.ndim == 3 else t[None, None] if t.ndim == 2 else t
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"expected a (H, W[, C]) image, got shape {arr.shape}")
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())[None]


def ssim(x, y, spec: SsimSpec = SsimSpec()) -> float:
    """SSIM of two single images in [-1, 1].

    Arrays are read as ``(H, W[, C])``; tensors as ``(C, H, W)`` or ``(H, W)``.
    """
    a, b = _as_nchw(x), _as_nchw(y)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return float(ssim_per_image(a, b, spec)[0])


def target_class(pred_orig, mode: str):
    """Class the explanation has to receive: same class for alterfactuals, flipped for counterfactuals."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return pred_orig if mode == "alterfactual" else 1 - pred_orig


@dataclass
class ExplanationRecord:
    id: int
    original: np.ndarray | None
    explanation: np.ndarray | None
    target_class: int
    pred_orig: tuple[float, float]
    pred_expl: tuple[float, float]
    ssim: float
    dist_orig: float | None
    dist_expl: float | None
    valid: bool

    def row(self) -> dict:
        return {
            "id": self.id,
            "pred_orig": int(self.pred_orig[1] >= 0.5),
            "pred_expl": int(self.pred_expl[1] >= 0.5),
            "p1_orig": self.pred_orig[1],
            "p1_expl": self.pred_expl[1],
            "target_class": self.target_class,
            "ssim": self.ssim,
            "dist_orig": self.dist_orig,
            "dist_expl": self.dist_expl,
            "valid": self.valid,
        }


@dataclass
class EvaluationReport:
    mode: str
    n: int
    validity_pct: float
    mean_ssim: float
    mean_boundary_drift: float | None
    ssim_spec: SsimSpec = field(default_factory=SsimSpec)
    records: list[ExplanationRecord] = field(default_factory=list)

    def summary(self) -> str:
        return f"validity={self.validity_pct:.2f} ssim={self.mean_ssim:.2f}"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "validity_pct": self.validity_pct,
            "mean_ssim": self.mean_ssim,
            "mean_boundary_drift": self.mean_boundary_drift,
            "ssim_spec": asdict(self.ssim_spec),
            "records": [r.row() for r in self.records],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = [r.row() for r in self.records]
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else ["id"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()


def aggregate(records: list[dict]) -> dict:
    """Recompute report aggregates from serialized records."""
    n = len(records)
    drifts = [abs(r["dist_orig"] - r["dist_expl"]) for r in records if r["dist_orig"] is not None]
    return {
        "n": n,
        "validity_pct": 100.0 * sum(bool(r["valid"]) for r in records) / n,
        "mean_ssim": sum(r["ssim"] for r in records) / n,
        "mean_boundary_drift": sum(drifts) / len(drifts) if drifts else None,
    }


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


@torch.no_grad()
def _class_probs(clf, images: torch.Tensor, batch_size: int) -> np.ndarray:
    out = [clf.probabilities(to_unit_range(images[s]).float()) for s in _batches(len(images), batch_size)]
    return torch.cat(out).double().numpy()


def validity(clf, originals, explanations, mode: str, batch_size: int = 64) -> float:
    """Percentage of explanations classified as their target class.

    ``originals`` and ``explanations`` are ``(N, C, H, W)`` tensors in [-1, 1].
    """
    originals, explanations = torch.as_tensor(originals), torch.as_tensor(explanations)
    if len(originals) == 0:
        raise ValueError("validity of an empty set is undefined")
    if originals.shape != explanations.shape:
        raise ValueError("originals and explanations must be paired")
    c_orig = (_class_probs(clf, originals, batch_size)[:, 1] >= 0.5).astype(np.int64)
    c_expl = (_class_probs(clf, explanations, batch_size)[:, 1] >= 0.5).astype(np.int64)
    return 100.0 * float((c_expl == target_class(c_orig, mode)).mean())


@torch.no_grad()
def evaluate(
    clf,
    surr,
    originals,
    explanations,
    mode: str,
    spec: SsimSpec = SsimSpec(),
    ids=None,
    batch_size: int = 64,
    keep_images: bool = False,
) -> EvaluationReport:
    """Score paired originals/explanations (``(N, C, H, W)`` in [-1, 1]).

    ``surr`` may be ``None`` (model-agnostic runs); distances are then omitted.
    """
    originals = torch.as_tensor(originals, dtype=torch.float32)
    explanations = torch.as_tensor(explanations, dtype=torch.float32)
    if len(originals) == 0:
        raise ValueError("nothing to evaluate")
    if originals.shape != explanations.shape:
        raise ValueError("originals and explanations must be paired")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ids = list(range(len(originals))) if ids is None else list(ids)

    p_orig = _class_probs(clf, originals, batch_size)
    p_expl = _class_probs(clf, explanations, batch_size)
    ssims = torch.cat([
        ssim_per_image(originals[s].double(), explanations[s].double(), spec)
        for s in _batches(len(originals), batch_size)
    ]).numpy()
    if surr is not None:
        feats = lambda imgs: torch.cat([
            clf.features(to_unit_range(imgs[s])) for s in _batches(len(imgs), batch_size)
        ]).double().numpy()
        d_orig, d_expl = surr.distance(feats(originals)), surr.distance(feats(explanations))
    else:
        d_orig = d_expl = [None] * len(originals)

    records = []
    for i in range(len(originals)):
        target = int(target_class(int(p_orig[i, 1] >= 0.5), mode))
        records.append(ExplanationRecord(
            id=int(ids[i]),
            original=originals[i].numpy() if keep_images else None,
            explanation=explanations[i].numpy() if keep_images else None,
            target_class=target,
            pred_orig=(float(p_orig[i, 0]), float(p_orig[i, 1])),
            pred_expl=(float(p_expl[i, 0]), float(p_expl[i, 1])),
            ssim=float(ssims[i]),
            dist_orig=None if d_orig[i] is None else float(d_orig[i]),
            dist_expl=None if d_expl[i] is None else float(d_expl[i]),
            valid=int(p_expl[i, 1] >= 0.5) == target,
        ))
    agg = aggregate([r.row() for r in records])
    if not math.isfinite(agg["mean_ssim"]):
        raise ValueError("non-finite SSIM in evaluation")
    return EvaluationReport(mode, agg["n"], agg["validity_pct"], agg["mean_ssim"], agg["mean_boundary_drift"], spec, records)
