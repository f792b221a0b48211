"""Command-line pipeline: train-classifier, fit-svm, train-explainer, evaluate, render.

Exit codes: 0 success, 2 config error, 3 training failure, 4 missing artifact.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

import torch

from .boundary import DegenerateFitError, HyperplaneSurrogate, SvmConfig, fit_surrogate
from .classifier import ClassifierConfig, TrainedClassifier, TrainingError, predicted_class, train_classifier
from .config import ConfigError, ExperimentConfig
from .data import DEFAULT_CACHE_DIR, DatasetUnavailableError, PreprocessSpec, load_binary_subset, to_unit_range
from .explainer import ExplainerConfig, ExplainerModel, explain, train_explainer
from .io import atomic_write_json, atomic_write_text
from .metrics import evaluate
from .render import save_grid, save_strip

logger = logging.getLogger("alterfactual")

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING, EXIT_MISSING = 0, 2, 3, 4


class MissingArtifactError(RuntimeError):
    pass


def _preprocess_spec(cfg: ExperimentConfig) -> PreprocessSpec:
    try:
        return PreprocessSpec(cfg.data.resolution, cfg.data.resize_filter)
    except ValueError as exc:
        raise ConfigError("data.resolution", str(exc)) from None


def load_split(cfg: ExperimentConfig, split: str, limit: int = 0, seed: int = 0):
    """Load a preprocessed split; ``limit`` keeps a seeded random subset in original order."""
    data = cfg.data
    try:
        ds = load_binary_subset(
            data.dataset, data.class_a, data.class_b, split,
            cache_dir=data.cache_dir or DEFAULT_CACHE_DIR, spec=_preprocess_spec(cfg),
        )
    except DatasetUnavailableError as exc:
        raise MissingArtifactError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError("data", str(exc)) from exc
    if limit and limit < len(ds):
        keep = np.sort(np.random.default_rng(seed).permutation(len(ds))[:limit])
        ds = ds.subset(keep)
    return ds


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing required artifact: {path}")
    return path


def cmd_train_classifier(cfg: ExperimentConfig, run_dir: Path) -> None:
    train = load_split(cfg, "train", cfg.data.max_train_samples)
    test = load_split(cfg, "test")
    ccfg = ClassifierConfig(
        batch_size=cfg.classifier.batch_size, epochs=cfg.classifier.epochs,
        learning_rate=cfg.classifier.lr, seed=cfg.classifier.seed,
    )
    logger.info("training classifier on %d images (%s), testing on %d", len(train), train.class_counts(), len(test))
    clf = train_classifier(
        train, test, ccfg, preprocess=_preprocess_spec(cfg),
        on_epoch_end=lambda epoch, loss: print(f"epoch {epoch + 1}/{ccfg.epochs} loss={loss:.4f}", flush=True),
    )
    clf.save(run_dir / "classifier.ckpt")
    atomic_write_json(run_dir / "classifier_metrics.json", {
        "test_accuracy": clf.history["test_accuracy"],
        "train_loss": clf.history["train_loss"],
        "n_train": len(train),
        "n_test": len(test),
        "class_names": list(train.class_names),
        "config": cfg.to_dict()["classifier"],
    })
    print(f"test_accuracy={100 * clf.history['test_accuracy']:.2f}")


@torch.no_grad()
def _features_and_decisions(clf: TrainedClassifier, images: torch.Tensor, batch_size: int = 64):
    feats, probs = [], []
    for i in range(0, len(images), batch_size):
        x = to_unit_range(images[i:i + batch_size])
        f = clf.features(x)
        feats.append(f.double().numpy())
        probs.append(torch.softmax(clf.net.head(f), dim=1).numpy())
    return np.concatenate(feats), predicted_class(np.concatenate(probs))


def cmd_fit_svm(cfg: ExperimentConfig, run_dir: Path) -> None:
    clf = TrainedClassifier.load(_require(run_dir / "classifier.ckpt"))
    train = load_split(cfg, "train", cfg.data.max_train_samples)
    features, decisions = _features_and_decisions(clf, train.to_tensor())
    scfg = SvmConfig(cfg.svm.C, cfg.svm.max_iterations, cfg.svm.holdout_fraction, cfg.svm.seed)
    try:
        surr = fit_surrogate(features, decisions, scfg)
    except DegenerateFitError as exc:
        raise TrainingError(str(exc)) from exc
    surr.save(run_dir / "surrogate.bin")
    atomic_write_json(run_dir / "svm_metrics.json", surr.fit_report)
    print(f"holdout_agreement={surr.fit_report['holdout_agreement']:.4f}")


def explainer_config(cfg: ExperimentConfig) -> ExplainerConfig:
    gan = cfg.gan
    try:
        return ExplainerConfig(
            mode=gan.mode, batch_size=gan.batch_size, epochs=gan.epochs,
            lr_generator=gan.lr_g, lr_discriminator=gan.lr_d, weights=tuple(gan.lambdas),
            use_boundary_loss=gan.use_boundary_loss, seed=gan.seed, steps_per_epoch=gan.steps_per_epoch,
        )
    except ValueError as exc:
        raise ConfigError("gan", str(exc)) from None


def cmd_train_explainer(cfg: ExperimentConfig, run_dir: Path) -> None:
    ecfg = explainer_config(cfg)
    clf = TrainedClassifier.load(_require(run_dir / "classifier.ckpt"))
    surr = None
    if ecfg.boundary_active:
        surr = HyperplaneSurrogate.load(_require(run_dir / "surrogate.bin"))
    train = load_split(cfg, "train", cfg.data.max_train_samples)
    if clf.input_resolution != train.shape[0]:
        raise ConfigError("data.resolution", f"classifier expects {clf.input_resolution}px inputs")
    model = train_explainer(ecfg.mode, clf, surr, train, ecfg, run_dir=run_dir)
    atomic_write_json(run_dir / f"explainer_{ecfg.mode}_metrics.json", {
        "epochs": model.epoch, "history": model.history, "config": ecfg.to_dict(),
    })


def _load_explainer(cfg, run_dir, checkpoint=None):
    path = Path(checkpoint) if checkpoint else run_dir / f"explainer_{cfg.gan.mode}.ckpt"
    return ExplainerModel.load(_require(path))


def cmd_evaluate(cfg: ExperimentConfig, run_dir: Path) -> None:
    clf = TrainedClassifier.load(_require(run_dir / "classifier.ckpt"))
    model = _load_explainer(cfg, run_dir)
    surr_path = run_dir / "surrogate.bin"
    surr = HyperplaneSurrogate.load(surr_path) if surr_path.exists() else None
    data = load_split(cfg, cfg.eval.split, cfg.eval.limit)
    originals = data.to_tensor()
    explanations = explain(model, originals, cfg.eval.seed)
    report = evaluate(clf, surr, originals, explanations, model.mode, model.config.ssim)
    out = run_dir / f"eval_{model.mode}"
    atomic_write_json(out / "report.json", report.to_dict())
    atomic_write_text(out / "report.csv", report.to_csv())
    print(report.summary())


def cmd_render(cfg: ExperimentConfig, run_dir: Path, args) -> None:
    if args.steps < 2:
        raise ConfigError("--steps", f"must be >= 2, got {args.steps}")
    try:
        indices = [int(v) for v in args.indices.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--indices", f"cannot parse {args.indices!r}") from None
    model = _load_explainer(cfg, run_dir, args.checkpoint)
    data = load_split(cfg, cfg.eval.split, cfg.eval.limit)
    if not indices or max(indices) >= len(data) or min(indices) < 0:
        raise ConfigError("--indices", f"indices must lie in [0, {len(data)})")
    out = run_dir / f"render_{model.mode}"
    originals, explanations = [], []
    for idx in indices:
        x = data.subset([idx]).to_tensor()
        # same seed offset as `evaluate`, so rendered samples match the report
        x_hat = explain(model, x, cfg.eval.seed + idx)
        x_hwc, x_hat_hwc = x[0].permute(1, 2, 0).numpy(), x_hat[0].permute(1, 2, 0).numpy()
        save_strip(out / f"strip_{idx}.png", x_hwc, x_hat_hwc, args.steps)
        originals.append(x_hwc)
        explanations.append(x_hat_hwc)
    save_grid(out / "grid.png", np.stack(originals), np.stack(explanations))
    print(f"wrote {out}")


COMMANDS = {
    "train-classifier": cmd_train_classifier,
    "fit-svm": cmd_fit_svm,
    "train-explainer": cmd_train_explainer,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alterfactual", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--run-dir", type=Path, help="override run_dir from the config")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "render":
            p.add_argument("--indices", default="0,1,2,3", help="comma-separated sample indices of the eval split")
            p.add_argument("--steps", type=int, default=8, help="frames in the interpolation strip")
            p.add_argument("--checkpoint", type=Path, help="explainer checkpoint (default: from run_dir)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if not args.config.exists():
            raise ConfigError("--config", f"file not found: {args.config}")
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            for section in (cfg.classifier, cfg.svm, cfg.gan, cfg.eval):
                section.seed = args.seed
        run_dir = Path(args.run_dir or cfg.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "render":
            cmd_render(cfg, run_dir, args)
        else:
            COMMANDS[args.command](cfg, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
