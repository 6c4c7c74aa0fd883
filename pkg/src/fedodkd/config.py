"""Experiment configuration: a flat key/value mapping stored as YAML.

Every key has a default. Unknown keys are rejected so that typos fail loudly.
Protocol defaults follow common federated-learning conventions (weight decay 1e-4,
20% activation, Dirichlet alpha 0.1, temperature 3, half of each client's data
unlabeled). Data, model and optimiser defaults describe the synthetic desk
benchmark: 10 classes of three Gaussian modes each in 20 dimensions, and a
one-hidden-layer MLP whose quarter-width copy cannot fit all thirty modes.
The KL weight is small (0.02) because larger values pull the target model
towards the weaker teacher on classes the strong clients already cover.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .losses import DistillConfig
from .nn_core import LrSchedule, ModelSpec

METHODS = (
    "proposed",
    "fedavg_weak_only",
    "fedavg_strong_only",
    "feddf",
    "dsfl",
    "fedmd",
)

METHOD_ALIASES = {
    "weak_only": "fedavg_weak_only",
    "strong_only": "fedavg_strong_only",
    "fedavg": "fedavg_weak_only",
}


def canonical_method(name: str) -> str:
    name = METHOD_ALIASES.get(name, name)
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    return name


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    methods: list[str] = field(default_factory=lambda: ["proposed"])
    # clients
    n_clients: int = 100
    strong_fraction: float = 0.2
    activation_fraction: float = 0.2
    all_strong: bool = False
    # data
    num_classes: int = 10
    input_dim: int = 20
    samples_per_class: int = 150
    test_per_class: int = 200
    separation: float = 5.0
    modes_per_class: int = 3
    dirichlet_alpha: float = 0.1
    unlabeled_fraction: float = 0.5
    public_pool_size: int = 0
    public_pool_labeled: bool = False
    # models
    hidden_widths: list[int] = field(default_factory=lambda: [32])
    aux_scale: float = 0.25
    homogeneous_model: str = "aux"
    # optimisation
    tau: int = 10
    batch_size: int = 32
    lr: float = 0.2
    lr_milestones: list[list[float]] = field(default_factory=list)
    weight_decay: float = 1e-4
    # distillation
    temperature: float = 3.0
    lambda_max: float = 0.02
    ramp_threshold: int = 0
    apply_T_squared: bool = True
    kd_phase_includes_ce: bool = False
    aux_rounds: bool = True
    dsfl_sharpen_temperature: float = 1.0
    # schedule
    rounds: int = 400
    eval_every: int = 20
    # seeds
    seeds: list[int] = field(default_factory=lambda: [0])
    data_seed: int | None = None
    partition_seed: int | None = None
    init_seed: int | None = None
    train_seed: int | None = None
    # engine / reporting
    workers: int = 1
    bound_p: float = 0.05

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def fail(name, msg):
            raise ConfigError(f"{name}: {msg}")

        try:
            self.methods = [canonical_method(m) for m in self.methods]
        except ValueError as exc:
            fail("methods", str(exc))
        if not self.methods:
            fail("methods", "at least one method is required")
        for name in ("strong_fraction", "activation_fraction", "unlabeled_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                fail(name, f"must be in [0, 1], got {getattr(self, name)}")
        if self.activation_fraction == 0.0:
            fail("activation_fraction", "must be positive")
        if not 0.0 < self.aux_scale <= 1.0:
            fail("aux_scale", f"must be in (0, 1], got {self.aux_scale}")
        if self.dirichlet_alpha <= 0:
            fail("dirichlet_alpha", f"must be positive, got {self.dirichlet_alpha}")
        for name in ("n_clients", "num_classes", "input_dim", "samples_per_class", "modes_per_class", "tau",
                     "batch_size", "rounds", "eval_every", "workers"):
            if int(getattr(self, name)) < 1:
                fail(name, f"must be a positive integer, got {getattr(self, name)}")
        for name in ("test_per_class", "public_pool_size", "ramp_threshold"):
            if int(getattr(self, name)) < 0:
                fail(name, f"must be non-negative, got {getattr(self, name)}")
        if not self.hidden_widths or any(int(w) < 1 for w in self.hidden_widths):
            fail("hidden_widths", "must be a non-empty list of positive integers")
        for name in ("separation", "lr", "temperature", "dsfl_sharpen_temperature"):
            if getattr(self, name) <= 0:
                fail(name, f"must be positive, got {getattr(self, name)}")
        for name in ("weight_decay", "lambda_max"):
            if getattr(self, name) < 0:
                fail(name, f"must be non-negative, got {getattr(self, name)}")
        if not 0.0 < self.bound_p < 1.0:
            fail("bound_p", "must be in (0, 1)")
        if self.homogeneous_model not in ("aux", "target"):
            fail("homogeneous_model", "must be 'aux' or 'target'")
        if not self.seeds:
            fail("seeds", "at least one seed is required")
        try:
            self.lr_schedule
        except ValueError as exc:
            fail("lr_milestones", str(exc))
        needs_pool = {"feddf", "dsfl", "fedmd"} & set(self.methods)
        if needs_pool and self.public_pool_size == 0:
            fail("public_pool_size", f"{sorted(needs_pool)} need a public pool")
        if "fedmd" in self.methods and not self.public_pool_labeled:
            fail("public_pool_labeled", "fedmd needs a labeled public pool")

    @property
    def target_spec(self) -> ModelSpec:
        return ModelSpec(self.input_dim, tuple(self.hidden_widths), self.num_classes, 1.0)

    @property
    def aux_spec(self) -> ModelSpec:
        return self.target_spec.scaled(self.aux_scale)

    @property
    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, tuple((int(e), float(v)) for e, v in self.lr_milestones))

    @property
    def distill(self) -> DistillConfig:
        return DistillConfig(
            self.temperature, self.lambda_max, int(self.ramp_threshold), self.apply_T_squared
        )

    @property
    def n_strong(self) -> int:
        return int(round(self.strong_fraction * self.n_clients))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict | None) -> "ExperimentConfig":
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        if isinstance(raw.get("methods"), str):
            raw["methods"] = [raw["methods"]]
        return cls(**raw)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a key/value mapping at top level")
    return ExperimentConfig.from_dict(raw)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False), encoding="utf-8")
