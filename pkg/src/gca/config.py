"""Experiment configuration: one YAML file with nested sections, unknown keys rejected."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from gca.data import SplitSpec
from gca.errors import ConfigError
from gca.experiment import VARIANT_CHOICES, DataConfig
from gca.objective import ObjectiveConfig
from gca.synth import TABLE1_DOMAINS, DomainGenConfig, table1_configs
from gca.trainer import TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainSection(_Section):
    id: str
    noise_variance: float = Field(1.0, ge=0)
    sample_interval: int = Field(1, ge=1)
    nonlin_c: float = Field(0.0, ge=0)
    length: int = Field(1000, gt=0)
    burn_in: int = Field(100, ge=0)
    seed: Optional[int] = None  # defaults to the family seed plus the domain index


class SynthSection(_Section):
    D: int = Field(5, ge=2)
    k: int = Field(3, ge=1)
    edge_density: float = Field(0.2, gt=0, le=1)
    structure_jitter: float = Field(0.05, ge=0, le=0.2)
    seed: int = 0
    preset: Optional[Literal["table1"]] = "table1"
    length: int = Field(5000, gt=0)
    burn_in: int = Field(100, ge=0)
    domains: Optional[list[DomainSection]] = None

    @model_validator(mode="after")
    def _one_source_of_domains(self):
        if self.domains is not None and len(self.domains) == 0:
            raise ValueError("domains must be nonempty when given")
        if self.domains is None and self.preset is None:
            raise ValueError("give either a preset or an explicit domains list")
        return self

    def domain_configs(self) -> tuple[list[str], list[DomainGenConfig]]:
        if self.domains is not None:
            ids = [d.id for d in self.domains]
            cfgs = [
                DomainGenConfig(
                    noise_variance=d.noise_variance,
                    sample_interval=d.sample_interval,
                    nonlin_c=d.nonlin_c,
                    length=d.length,
                    burn_in=d.burn_in,
                    seed=self.seed + i if d.seed is None else d.seed,
                )
                for i, d in enumerate(self.domains)
            ]
            return ids, cfgs
        ids = [f"domain{i + 1}" for i in range(len(TABLE1_DOMAINS))]
        return ids, table1_configs(self.length, self.burn_in, self.seed)


class DataSection(_Section):
    dataset_dir: Optional[Path] = None
    source: str = "domain1"
    target: str = "domain2"
    t_in: Optional[int] = Field(None, ge=1)
    horizon: int = Field(1, ge=1)
    stride: int = Field(1, ge=1)
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    target_label_frac: float = Field(0.05, gt=0, le=1)

    def to_data_config(self) -> DataConfig:
        split = SplitSpec(self.train_frac, self.val_frac, self.test_frac, self.target_label_frac)
        return DataConfig(self.t_in, self.horizon, self.stride, split)


class ModelSection(_Section):
    d_alpha: int = Field(8, ge=1)
    d_beta: int = Field(8, ge=1)
    d_e: int = Field(32, ge=1)
    enc_hidden: Optional[int] = Field(None, ge=1)
    pred_hidden: int = Field(32, ge=1)
    d_var: int = Field(4, ge=1)
    history_len: Optional[int] = Field(None, ge=1)
    init_edge_prob: Optional[float] = Field(0.9, gt=0, lt=1)
    lstm_hidden: int = Field(64, ge=1)

    def gca_kwargs(self, k: int) -> dict:
        out = self.model_dump(exclude={"lstm_hidden"})
        out["k"] = k
        return out


class ObjectiveSection(_Section):
    gamma: float = Field(0.15, ge=0)
    lam: float = Field(0.4, ge=0)
    delta: float = Field(1.0, ge=0)
    edge_prior_p: float = Field(0.1, gt=0, lt=1)
    target_dim: int = Field(0, ge=0)
    n_samples: int = Field(1, ge=1)
    hard: bool = False
    structure_scale: Literal["edge_mean", "sum"] = "edge_mean"


class TrainerSection(_Section):
    epochs: int = Field(40, ge=0)
    batch_size: int = Field(64, ge=1)
    target_batch_size: Optional[int] = Field(None, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    optimizer_name: Literal["adam", "adamw", "sgd"] = "adam"
    early_stop_patience: int = Field(10, ge=1)
    tau_start: float = Field(1.0, gt=0)
    tau_end: float = Field(0.3, gt=0)
    structure_warmup_epochs: int = Field(5, ge=0)
    grad_clip: float = Field(5.0, gt=0)
    steps_per_epoch: Optional[int] = Field(None, ge=1)
    use_unlabeled: bool = False
    eval_horizon: int = Field(1, ge=1)


class SweepSection(_Section):
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    variants: list[str] = Field(default_factory=lambda: ["gca"], min_length=1)
    with_baseline: bool = False

    @model_validator(mode="after")
    def _known_variants(self):
        bad = [v for v in self.variants if v not in VARIANT_CHOICES]
        if bad:
            raise ValueError(f"unknown variants {bad}; expected any of {list(VARIANT_CHOICES)}")
        return self


class ExperimentConfig(_Section):
    seed: int = 0
    deterministic: bool = True
    variant: str = "gca"
    synth: SynthSection = Field(default_factory=SynthSection)
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    objective: ObjectiveSection = Field(default_factory=ObjectiveSection)
    trainer: TrainerSection = Field(default_factory=TrainerSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @model_validator(mode="after")
    def _check(self):
        if self.variant not in VARIANT_CHOICES:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {list(VARIANT_CHOICES)}")
        if self.objective.target_dim >= self.synth.D:
            raise ValueError(f"objective.target_dim {self.objective.target_dim} >= synth.D {self.synth.D}")
        return self

    def train_config(self) -> TrainConfig:
        objective = ObjectiveConfig(
            **self.objective.model_dump(),
            variant=self.variant if self.variant != "lstm-st" else "gca",
        )
        return TrainConfig(
            **self.trainer.model_dump(),
            seed=self.seed,
            deterministic=self.deterministic,
            objective=objective,
        )


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(raw: Optional[dict]) -> ExperimentConfig:
    """Validate a mapping; errors name the offending field path, e.g. ``trainer.epochs``."""
    try:
        return ExperimentConfig.model_validate(raw or {})
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = parse_config(raw)
    if cfg.data.dataset_dir is not None and not cfg.data.dataset_dir.is_absolute():
        cfg.data.dataset_dir = (path.parent / cfg.data.dataset_dir).resolve()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
