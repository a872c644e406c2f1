"""Declarative experiment configuration.

Configs are JSON documents carrying a ``schema_version``; see README.md for
the schema. ``to_dict``/``from_dict`` round-trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

SCHEMA_VERSION = 1

METHODS = ("unweighted", "forward", "backward", "reweight", "forward-r", "reweight-r")


@dataclass
class StageConfig:
    """Optimiser settings for one training stage.

    The learning rate is divided by 10 after each epoch listed in
    ``milestones``.
    """

    epochs: int = 20
    learning_rate: float = 1e-2
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    milestones: list[int] = field(default_factory=list)
    batch_size: int = 128

    def validate(self, name):
        if self.epochs < 0:
            raise ConfigError(f"{name}.epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError(f"{name}.learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"{name}.batch_size must be positive")
        if self.optimizer not in ("sgd_momentum", "adam"):
            raise ConfigError(f"{name}.optimizer must be 'sgd_momentum' or 'adam'")

    def learning_rate_at(self, epoch: int) -> float:
        """Learning rate used during 0-based ``epoch``."""
        return self.learning_rate * 0.1 ** sum(1 for m in self.milestones if epoch >= m)


@dataclass
class TrainConfig:
    hidden: list[int] = field(default_factory=lambda: [64])
    stage1: StageConfig = field(default_factory=lambda: StageConfig(epochs=30, milestones=[20]))
    stage2_init: StageConfig = field(default_factory=lambda: StageConfig(epochs=30, milestones=[20]))
    revision: StageConfig = field(
        default_factory=lambda: StageConfig(epochs=20, learning_rate=5e-7, optimizer="adam", weight_decay=0.0)
    )
    # None: Delta T shares the revision learning rate.
    delta_learning_rate: float | None = None
    anchors_k: int = 1
    weight_detach: bool = True
    enforce_valid: bool = False
    # which of several epochs with equal minimum noisy-val error is kept
    selection_ties: str = "latest"
    val_fraction: float = 0.1
    bias: bool = True
    float32: bool = False

    def validate(self):
        for name in ("stage1", "stage2_init", "revision"):
            getattr(self, name).validate(name)
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden sizes must be positive")
        if self.anchors_k < 1:
            raise ConfigError("anchors_k must be at least 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.selection_ties not in ("earliest", "latest"):
            raise ConfigError("selection_ties must be 'earliest' or 'latest'")
        if self.delta_learning_rate is not None and self.delta_learning_rate <= 0:
            raise ConfigError("delta_learning_rate must be positive")


@dataclass
class DataConfig:
    """Exactly one source: ``gaussian`` (synthetic), ``idx`` or ``csv``.

    For the file sources the labels are taken as clean unless
    ``labels_are_noisy`` is set, in which case no corruption is applied
    and the true transition matrix is unknown.
    """

    source: str = "gaussian"
    # gaussian
    num_classes: int = 3
    dim: int = 2
    n: int = 5000
    n_test: int = 2000
    sigma: float = 1.0
    radius: float = 2.0
    means: list[list[float]] | None = None
    priors: list[float] | None = None
    # files
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_csv: str | None = None
    test_csv: str | None = None
    labels_are_noisy: bool = False
    max_train: int | None = None

    def validate(self):
        if self.source == "gaussian":
            if self.num_classes < 2 or self.dim < 1 or self.n < 2 or self.n_test < 0:
                raise ConfigError("gaussian source needs num_classes >= 2, dim >= 1, n >= 2")
            if self.sigma <= 0:
                raise ConfigError("sigma must be positive")
            if self.means is None and self.dim < 2:
                raise ConfigError("means must be given explicitly when dim < 2")
        elif self.source == "idx":
            if not (self.train_images and self.train_labels):
                raise ConfigError("idx source needs train_images and train_labels")
        elif self.source == "csv":
            if not self.train_csv:
                raise ConfigError("csv source needs train_csv")
        else:
            raise ConfigError(f"unknown data source {self.source!r}")


@dataclass
class NoiseConfig:
    kind: str = "symmetric"
    rate: float = 0.2
    custom: list[list[float]] | None = None

    def validate(self, num_classes=None):
        if self.kind == "symmetric":
            if not 0 <= self.rate < 1:
                raise ConfigError("symmetric noise rate must lie in [0, 1)")
        elif self.kind == "custom":
            if self.custom is None:
                raise ConfigError("custom noise needs a 'custom' matrix")
        else:
            raise ConfigError(f"unknown noise kind {self.kind!r}")


@dataclass
class AnchorRemovalConfig:
    """Remove likely anchor points before corruption.

    ``mode`` is ``none``, ``fraction`` (drop the top ``fraction`` per class)
    or ``cap`` (drop every instance whose max posterior exceeds ``cap``).
    """

    mode: str = "none"
    fraction: float = 0.2
    cap: float = 0.9

    def validate(self):
        if self.mode not in ("none", "fraction", "cap"):
            raise ConfigError(f"unknown anchor removal mode {self.mode!r}")
        if not 0 <= self.fraction < 1:
            raise ConfigError("anchor removal fraction must lie in [0, 1)")
        if not 0 < self.cap <= 1:
            raise ConfigError("anchor removal cap must lie in (0, 1]")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    anchor_removal: AnchorRemovalConfig = field(default_factory=AnchorRemovalConfig)
    method: str = "reweight-r"
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        self.data.validate()
        self.noise.validate()
        self.anchor_removal.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config").validate()

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


_NESTED = {
    ("ExperimentConfig", "data"): DataConfig,
    ("ExperimentConfig", "noise"): NoiseConfig,
    ("ExperimentConfig", "anchor_removal"): AnchorRemovalConfig,
    ("ExperimentConfig", "train"): TrainConfig,
    ("TrainConfig", "stage1"): StageConfig,
    ("TrainConfig", "stage2_init"): StageConfig,
    ("TrainConfig", "revision"): StageConfig,
}


def _build(cls, d, where):
    """Overlay mapping ``d`` on the defaults of ``cls``, recursing into nested sections."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in d.items():
        sub = _NESTED.get((cls.__name__, key))
        kwargs[key] = _overlay(cls, key, sub, value, f"{where}.{key}") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _overlay(parent, key, sub, value, where):
    # a partial section keeps the parent's own defaults for that section
    default = asdict(next(f for f in fields(parent) if f.name == key).default_factory())
    if isinstance(value, dict):
        value = _merge(default, value)
    return _build(sub, value, where)


def _merge(base, patch):
    out = dict(base)
    for k, v in patch.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out
