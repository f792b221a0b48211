"""Adversarial training of the explanation generator and seeded generation."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from ..classifier import TrainingError
from ..data import LabeledImageSet, to_unit_range
from ..io import atomic_torch_save, save_png, tile
from ..metrics import MODES, ExplanationRecord, SsimSpec, ssim_per_image, target_class
from .losses import (
    LossWeights,
    boundary_loss,
    classification_loss,
    fake_term,
    generator_adversarial_loss,
    real_term,
    similarity_loss,
    total_generator_loss,
)
from .networks import DiscriminatorNet, GeneratorNet

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "alterfactual.explainer/1"


@dataclass
class ExplainerConfig:
    mode: str = "alterfactual"
    batch_size: int = 1
    epochs: int = 14
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights | None = None  # None: all ones, boundary off for counterfactuals
    use_boundary_loss: bool = True
    seed: int = 0
    steps_per_epoch: int = 0  # 0 = one full pass over the training set
    ssim: SsimSpec = field(default_factory=SsimSpec)
    monitor_samples: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size != 1:
            raise ValueError("the explainer trains with batch size 1")
        if self.epochs <= 0 or self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("epochs and learning rates must be positive")
        if self.weights is None:
            self.weights = LossWeights(boundary=float(self.mode == "alterfactual"))
        elif isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        elif isinstance(self.weights, (tuple, list)):
            self.weights = LossWeights(*self.weights)
        if isinstance(self.ssim, dict):
            self.ssim = SsimSpec(**self.ssim)
        if self.mode == "counterfactual" and (self.weights.boundary or self.use_boundary_loss):
            if self.weights.boundary:
                warnings.warn("boundary loss weight forced to 0 in counterfactual mode", stacklevel=2)
            self.weights = LossWeights(*self.weights.as_tuple()[:3], 0.0)
            self.use_boundary_loss = False

    @property
    def boundary_active(self) -> bool:
        return self.mode == "alterfactual" and self.use_boundary_loss and self.weights.boundary > 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExplainerModel:
    generator: GeneratorNet
    discriminator: DiscriminatorNet
    mode: str
    config: ExplainerConfig
    epoch: int = 0
    history: list = field(default_factory=list)

    def save(self, path, rng_state=None) -> None:
        atomic_torch_save({
            "format": CHECKPOINT_FORMAT,
            "mode": self.mode,
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            "generator_arch": self.generator.arch(),
            "discriminator_arch": self.discriminator.arch(),
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "history": self.history,
            "rng_state": rng_state if rng_state is not None else torch.get_rng_state(),
        }, path)

    @classmethod
    def load(cls, path) -> "ExplainerModel":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not an explainer checkpoint")
        G = GeneratorNet(**blob["generator_arch"])
        D = DiscriminatorNet(**blob["discriminator_arch"])
        G.load_state_dict(blob["generator"])
        D.load_state_dict(blob["discriminator"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg = ExplainerConfig(**blob["config"])
        return cls(G, D, blob["mode"], cfg, blob["epoch"], blob["history"])


def _check_image(model: ExplainerModel, x: torch.Tensor) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=torch.float32)
    if x.ndim == 3:
        x = x[None]
    G = model.generator
    res = model.discriminator.image_size
    if x.ndim != 4 or x.shape[1] != G.in_channels or x.shape[-2:] != (res, res):
        raise ValueError(f"expected a preprocessed ({G.in_channels}, {res}, {res}) image, got {tuple(x.shape)}")
    if x.min() < -1.0 or x.max() > 1.0:
        raise ValueError("image is not preprocessed: values must lie in [-1, 1]")
    return x


@torch.no_grad()
def explain(model: ExplainerModel, x, seed: int) -> torch.Tensor:
    """Explanation image(s) for preprocessed input(s), one seeded dropout mask per sample.

    Sample ``i`` of a batch uses seed ``seed + i``, so results do not depend
    on how inputs are batched.
    """
    x = _check_image(model, x)
    G = model.generator
    was_training = G.training
    G.train()  # dropout stays active: it is the noise source
    out = []
    try:
        for i in range(len(x)):
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(seed + i)
                out.append(G(x[i:i + 1]))
    finally:
        G.train(was_training)
    return torch.cat(out)


@torch.no_grad()
def generate(model: ExplainerModel, x, seed: int, clf, surr=None, spec: SsimSpec | None = None) -> ExplanationRecord:
    """Generate the explanation of one preprocessed image and score it."""
    x = _check_image(model, x)
    if len(x) != 1:
        raise ValueError("generate takes a single image")
    x_hat = explain(model, x, seed)
    spec = spec or model.config.ssim
    p_orig = clf.probabilities(to_unit_range(x))[0].double()
    p_expl = clf.probabilities(to_unit_range(x_hat))[0].double()
    target = int(target_class(int(p_orig[1] >= 0.5), model.mode))
    d_orig = d_expl = None
    if surr is not None:
        d_orig = float(surr.distance(clf.features(to_unit_range(x)).double())[0])
        d_expl = float(surr.distance(clf.features(to_unit_range(x_hat)).double())[0])
    return ExplanationRecord(
        id=0,
        original=x[0].numpy(),
        explanation=x_hat[0].numpy(),
        target_class=target,
        pred_orig=tuple(float(v) for v in p_orig),
        pred_expl=tuple(float(v) for v in p_expl),
        ssim=float(ssim_per_image(x.double(), x_hat.double(), spec)[0]),
        dist_orig=d_orig,
        dist_expl=d_expl,
        valid=int(p_expl[1] >= 0.5) == target,
    )


@torch.no_grad()
def _decisions(clf, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    out = [(clf.probabilities(to_unit_range(images[i:i + batch_size]))[:, 1] >= 0.5).long()
           for i in range(0, len(images), batch_size)]
    return torch.cat(out)


def _write_monitor_grid(model, images, path, seed):
    fakes = explain(model, images, seed)
    rows = torch.cat([images, fakes]).permute(0, 2, 3, 1).numpy()
    save_png(path, tile(rows, ncols=len(images)))


def train_explainer(
    mode: str,
    clf,
    surr,
    train_set: LabeledImageSet,
    cfg: ExplainerConfig | None = None,
    run_dir=None,
    generator: GeneratorNet | None = None,
    discriminator: DiscriminatorNet | None = None,
) -> ExplainerModel:
    """Alternate one discriminator update (real pair, then fake pair) with one
    generator update on the summed loss, one sample at a time.

    With ``run_dir`` set, ``explainer_<mode>.ckpt`` is rewritten after every
    epoch and a monitor grid goes to ``samples/epoch_<n>.png``. A non-finite
    loss aborts training; the last epoch's checkpoint is left untouched.
    """
    cfg = cfg or ExplainerConfig(mode=mode)
    if cfg.mode != mode:
        raise ValueError(f"config mode {cfg.mode!r} does not match {mode!r}")
    if not clf.frozen:
        raise ValueError("classifier must be frozen")
    if cfg.boundary_active and surr is None:
        raise ValueError("alterfactual training with the boundary loss needs a fitted surrogate")

    torch.manual_seed(cfg.seed)
    images = train_set.to_tensor()
    res, channels = images.shape[-1], images.shape[1]
    G = generator or GeneratorNet(channels)
    D = discriminator or DiscriminatorNet(channels, res)
    if res < G.min_resolution:
        raise ValueError(f"images of {res}px are too small for a {len(G.encoder_filters)}-layer encoder")
    model = ExplainerModel(G, D, mode, cfg)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr_generator, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.lr_discriminator, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)

    decisions = _decisions(clf, images)
    targets = target_class(decisions, mode)
    order_rng = torch.Generator().manual_seed(cfg.seed)
    monitor = images[: cfg.monitor_samples]
    run_dir = Path(run_dir) if run_dir is not None else None
    steps = cfg.steps_per_epoch or len(images)
    ckpt = run_dir / f"explainer_{mode}.ckpt" if run_dir else None

    for epoch in range(cfg.epochs):
        G.train()
        D.train()
        sums = dict.fromkeys(("d_real", "d_fake", "adversarial", "classification", "similarity", "boundary", "total"), 0.0)
        perm = torch.randperm(len(images), generator=order_rng)[:steps]
        for step, idx in enumerate(perm.tolist()):
            x = images[idx:idx + 1]
            y_real, y_fake = decisions[idx:idx + 1], targets[idx:idx + 1]
            x_hat = G(x)

            # two discriminator sub-steps: real pair, then fake pair
            for term_fn, args in ((real_term, (x, y_real)), (fake_term, (x_hat, y_fake))):
                opt_d.zero_grad()
                term = term_fn(D, *args)
                if not torch.isfinite(term):
                    raise TrainingError(f"discriminator loss not finite at epoch {epoch}, step {step}")
                term.backward()
                opt_d.step()
                sums["d_real" if term_fn is real_term else "d_fake"] += term.item()

            comps = {
                "adversarial": generator_adversarial_loss(D, x_hat, y_fake),
                "classification": classification_loss(clf, x, x_hat, mode, target=y_fake),
                "similarity": similarity_loss(x, x_hat, mode, cfg.ssim),
            }
            if cfg.boundary_active:
                comps["boundary"] = boundary_loss(clf, surr, x, x_hat)
            total = total_generator_loss(comps, cfg.weights, mode)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()

            sums["total"] += total.item()
            for k, v in comps.items():
                sums[k] += v.item()
            if (step + 1) % 500 == 0:
                logger.info("epoch %d step %d/%d total=%.4f", epoch + 1, step + 1, steps, sums["total"] / (step + 1))

        means = {k: v / len(perm) for k, v in sums.items()}
        if not all(math.isfinite(v) for v in means.values()):
            raise TrainingError(f"non-finite epoch mean at epoch {epoch}")
        model.epoch = epoch + 1
        model.history.append(means)
        logger.info("epoch %d/%d %s", epoch + 1, cfg.epochs, " ".join(f"{k}={v:.4f}" for k, v in means.items()))
        if run_dir is not None:
            _write_monitor_grid(model, monitor, run_dir / "samples" / f"epoch_{epoch + 1}.png", cfg.seed)
            model.save(ckpt)
    return model


def explain_dataset(model: ExplainerModel, dataset: LabeledImageSet, seed: int) -> torch.Tensor:
    """Explanations for every image of a dataset (sample ``i`` uses ``seed + i``)."""
    return explain(model, dataset.to_tensor(), seed)


__all__ = [
    "ExplainerConfig", "ExplainerModel", "explain", "explain_dataset", "generate", "train_explainer",
]
