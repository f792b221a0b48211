"""Experiment configuration files.

A config is plain ``key = value`` text. Keys live either in ``[section]``
blocks or as dotted keys at the top of the file::

    run_dir = runs/fashion

    [data]
    dataset = fashion_mnist

    gan.mode = counterfactual

Defaults reproduce the Fashion-MNIST ankle-boot/sneaker setup.
"""
from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _positive(section, obj, *names):
    for name in names:
        if not getattr(obj, name) > 0:
            raise ConfigError(f"{section}.{name}", f"must be positive, got {getattr(obj, name)}")


@dataclass
class DataSection:
    dataset: str = "fashion_mnist"
    class_a: str = "ankle_boot"
    class_b: str = "sneaker"
    cache_dir: str = ""
    resolution: int = 128
    resize_filter: str = "bilinear"
    max_train_samples: int = 0  # 0 = whole split

    def validate(self):
        if self.dataset not in ("fashion_mnist", "mnist", "custom_dir"):
            raise ConfigError("data.dataset", f"unknown dataset {self.dataset!r}")
        if self.class_a == self.class_b:
            raise ConfigError("data.class_b", "must differ from data.class_a")
        if self.resize_filter not in ("bilinear", "nearest"):
            raise ConfigError("data.resize_filter", f"unknown filter {self.resize_filter!r}")
        _positive("data", self, "resolution")
        if self.max_train_samples < 0:
            raise ConfigError("data.max_train_samples", "must be >= 0")


@dataclass
class ClassifierSection:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def validate(self):
        _positive("classifier", self, "epochs", "batch_size", "lr")


@dataclass
class SvmSection:
    C: float = 10.0
    max_iterations: int = 5000
    holdout_fraction: float = 0.1
    seed: int = 0

    def validate(self):
        _positive("svm", self, "C", "max_iterations")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("svm.holdout_fraction", "must lie in (0, 1)")


@dataclass
class GanSection:
    mode: str = "alterfactual"
    epochs: int = 14
    batch_size: int = 1
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)  # adversarial, classification, similarity, boundary
    use_boundary_loss: bool = True
    seed: int = 0
    steps_per_epoch: int = 0  # 0 = full pass over the training split

    def validate(self):
        if self.mode not in ("alterfactual", "counterfactual"):
            raise ConfigError("gan.mode", f"unknown mode {self.mode!r}")
        _positive("gan", self, "epochs", "batch_size", "lr_g", "lr_d")
        if self.batch_size != 1:
            raise ConfigError("gan.batch_size", "only batch size 1 is supported")
        if len(self.lambdas) != 4 or any(v < 0 for v in self.lambdas):
            raise ConfigError("gan.lambdas", "expected four non-negative weights")
        if self.steps_per_epoch < 0:
            raise ConfigError("gan.steps_per_epoch", "must be >= 0")


@dataclass
class EvalSection:
    split: str = "test"
    seed: int = 0
    limit: int = 0  # 0 = whole split

    def validate(self):
        if self.split not in ("train", "test"):
            raise ConfigError("eval.split", f"unknown split {self.split!r}")
        if self.limit < 0:
            raise ConfigError("eval.limit", "must be >= 0")


@dataclass
class ExperimentConfig:
    run_dir: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    svm: SvmSection = field(default_factory=SvmSection)
    gan: GanSection = field(default_factory=GanSection)
    eval: EvalSection = field(default_factory=EvalSection)

    SECTIONS = ("data", "classifier", "svm", "gan", "eval")

    def validate(self) -> "ExperimentConfig":
        for name in self.SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "ExperimentConfig":
        """Build from flat ``{"section.key": "text"}`` pairs."""
        cfg = cls()
        for dotted, raw in values.items():
            if dotted == "run_dir":
                cfg.run_dir = raw
                continue
            section, _, key = dotted.partition(".")
            if section not in cls.SECTIONS or not key:
                raise ConfigError(dotted, "unknown key")
            target = getattr(cfg, section)
            hints = typing.get_type_hints(type(target))
            if key not in hints:
                raise ConfigError(dotted, "unknown key")
            setattr(target, key, _coerce(dotted, raw, hints[key]))
        return cfg.validate()

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string("[__root__]\n" + text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError("<file>", str(exc)) from exc
        flat = {}
        for section in parser.sections():
            for key, value in parser.items(section):
                dotted = key if section == "__root__" else f"{section}.{key}"
                if dotted in flat:
                    raise ConfigError(dotted, "given twice")
                flat[dotted] = value
        return cls.from_mapping(flat)


def _coerce(key, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is tuple:
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return typ(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
