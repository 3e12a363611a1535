"""Run configuration: one JSON document, nested sections, CLI flags override."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .evidential import LossWeights
from .stabilizer import DamperConfig
from .toymodel import DataSpec, OodRule


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    n_rbf: int = 32
    cutoff: float = 5.0
    init_scale: float = 0.1
    tensor_init_scale: float = 1.0
    warm_start: bool = True
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 200
    batch_size: int = 16
    max_steps: int | None = None
    plateau_factor: float = 0.85
    plateau_patience: int = 50
    min_lr: float = 0.0
    damper_enabled: bool = True

    def validate(self):
        if self.n_rbf < 2:
            raise ConfigError("n_rbf must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")


@dataclass
class EnsembleConfig:
    members: int = 5
    target: float = 0.9
    tol: float = 0.005

    def validate(self):
        if self.members < 2:
            raise ConfigError("an ensemble needs at least 2 members")
        if not 0 < self.target < 1:
            raise ConfigError("target level must lie in (0, 1)")


@dataclass
class EvalConfig:
    es_samples: int = 128
    n_rotations: int = 300
    levels: tuple = (0.8, 0.9, 0.95)


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    data: DataSpec = field(default_factory=DataSpec)
    ood: OodRule = field(default_factory=OodRule)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    damper: DamperConfig = field(default_factory=DamperConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        self.train.validate()
        self.ensemble.validate()
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d):
        return _build(cls, d, "config").validate()

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    defaults = cls()
    kw = {}
    for name, value in d.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kw[name] = _build(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
