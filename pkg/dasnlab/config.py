"""
Laboratory configuration module.

Environment-level settings live in the `Config` classes; everything that
defines a run lives in the `RunConfig` schema loaded from a JSON file.
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dasnlab.errors.exceptions import ConfigurationError, StorageError
from dasnlab.services.losses import LossWeights
from dasnlab.services.model import DOMAIN_FACTOR, SIF_FACTORS
from dasnlab.services.synthdata import FactorCoefficients, parse_task

load_dotenv()

CONFIG_VERSION = 1


class Config:
    """Base configuration class."""

    LOG_LEVEL = os.environ.get("DASN_LOG_LEVEL", "INFO").upper()
    LOG_FORMAT = os.environ.get(
        "DASN_LOG_FORMAT", "%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    DEFAULT_CONFIG_PATH = os.environ.get("DASN_CONFIG", "configs/reference.json")


class DevelopmentConfig(Config):
    """Development configuration."""

    LOG_LEVEL = os.environ.get("DASN_LOG_LEVEL", "DEBUG").upper()


class ReferenceConfig(Config):
    """Reference-suite runs: quieter logs, timestamps kept."""

    LOG_LEVEL = os.environ.get("DASN_LOG_LEVEL", "INFO").upper()


class TestingConfig(Config):
    """Testing configuration."""

    DEFAULT_CONFIG_PATH = None
    LOG_LEVEL = "WARNING"
    LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


ENVIRONMENTS = {
    "development": DevelopmentConfig,
    "reference": ReferenceConfig,
    "testing": TestingConfig,
}


def config_for_env(env: Optional[str] = None):
    """Configuration class named by `env`, or by DASN_ENV when omitted."""
    env = (env or os.environ.get("DASN_ENV", "development")).lower()
    try:
        return ENVIRONMENTS[env]
    except KeyError:
        raise ConfigurationError(
            f"Unknown environment '{env}'; expected one of {sorted(ENVIRONMENTS)}"
        ) from None


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSettings(_Section):
    """Factor-model coefficients of the synthetic suite."""

    input_dim: int = Field(24, ge=1)
    samples_per_identity: int = Field(24, ge=2)
    spoof_strength: float = 2.0
    spoof_scale_range: Tuple[float, float] = (0.6, 1.4)
    spoof_tilt: float = Field(1.0, ge=0.0)
    identity_weight: float = 1.5
    environment_weight: float = 1.0
    sensor_weight: float = 1.0
    noise_sigma: float = Field(0.5, ge=0.0)
    capture_bias: float = Field(0.8, ge=0.5, le=1.0)
    condition_share: float = Field(0.8, ge=0.0, le=1.0)

    def coefficients(self) -> FactorCoefficients:
        return FactorCoefficients(
            spoof_strength=self.spoof_strength,
            spoof_scale_range=tuple(self.spoof_scale_range),
            spoof_tilt=self.spoof_tilt,
            identity_weight=self.identity_weight,
            environment_weight=self.environment_weight,
            sensor_weight=self.sensor_weight,
            noise_sigma=self.noise_sigma,
            capture_bias=self.capture_bias,
            condition_share=self.condition_share,
        )


class ModelSettings(_Section):
    feature_dim: int = Field(32, ge=1)
    hidden_dim: int = Field(32, ge=1)


class TrainConfig(_Section):
    """
    Training schedule. The mode fixes which factors and terms take part:
    baseline trains E and C on L_cls only, ASN drops every L_scls term,
    ASN_d is ASN over the single pseudo-factor "domain", DASN uses both
    adversarial games.
    """

    mode: Literal["baseline", "ASN", "ASN_d", "DASN"] = "DASN"
    factors: List[str] = Field(default_factory=lambda: list(SIF_FACTORS))
    lambdas: Dict[str, float] = Field(default_factory=dict)
    lr: float = Field(1e-5, ge=0.0)
    batch_size: Optional[int] = Field(None, ge=1)
    epochs: int = Field(50, ge=0)
    seed: int = 1
    alternation: Literal["batch", "epoch"] = "batch"
    eval_every: int = Field(0, ge=0)
    checkpoint_every: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _normalize_factors(self):
        if self.mode == "baseline":
            self.factors = []
        elif self.mode == "ASN_d":
            self.factors = [DOMAIN_FACTOR]
        else:
            if not self.factors:
                raise ValueError(f"mode {self.mode} needs at least one factor")
            unknown = [k for k in self.factors if k not in SIF_FACTORS]
            if unknown:
                raise ValueError(f"unknown factors {unknown}; expected a subset of {SIF_FACTORS}")
            if len(set(self.factors)) != len(self.factors):
                raise ValueError(f"duplicate factors in {self.factors}")
        for k, w in self.lambdas.items():
            if w < 0:
                raise ValueError(f"lambda for '{k}' must be nonnegative")
        return self

    @property
    def include_secondary(self) -> bool:
        return self.mode == "DASN"

    def weights(self) -> LossWeights:
        return LossWeights.for_factors(self.factors, self.lambdas)

    def resolved_batch_size(self, task: Optional[str] = None) -> int:
        """Explicit batch size, else 32 for tasks held out on O and 64 otherwise."""
        if self.batch_size is not None:
            return self.batch_size
        if task is not None and parse_task(task)[1] == "O":
            return 32
        return 64


class ProbeSettings(_Section):
    epochs: int = Field(200, ge=1)
    lr: float = Field(0.05, gt=0.0)
    hidden_dim: Optional[int] = Field(None, ge=1)
    split: Literal["train", "test"] = "train"
    factors: List[str] = Field(default_factory=lambda: list(SIF_FACTORS))
    baseline_dir: Optional[str] = None
    export_features: bool = True


class ReportSettings(_Section):
    runs: List[str] = Field(default_factory=list)
    workers: int = Field(4, ge=1)


class PathSettings(_Section):
    data_dir: str = "data"
    out_dir: str = "runs/dasn"


class RunConfig(_Section):
    """Fully resolved configuration of one command invocation."""

    config_version: Literal[1] = CONFIG_VERSION
    seed: int = 1
    task: str = "OCI_to_M"
    data: DataSettings = Field(default_factory=DataSettings)
    model: ModelSettings = Field(default_factory=ModelSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)
    probe: ProbeSettings = Field(default_factory=ProbeSettings)
    report: ReportSettings = Field(default_factory=ReportSettings)
    paths: PathSettings = Field(default_factory=PathSettings)

    @field_validator("task")
    @classmethod
    def _check_task(cls, value: str) -> str:
        try:
            parse_task(value)
        except ConfigurationError as exc:
            raise ValueError(exc.message) from None
        return value

    @model_validator(mode="after")
    def _single_seed(self):
        if "seed" in self.train.model_fields_set and self.train.seed != self.seed:
            raise ValueError("train.seed must not differ from the top-level seed")
        self.train.seed = self.seed
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def parse_override(assignment: str) -> Tuple[List[str], Any]:
    """
    Split "train.lr=1e-4" into (["train", "lr"], 0.0001).

    Values are parsed as JSON literals and fall back to plain strings.
    """
    if "=" not in assignment:
        raise ConfigurationError(f"Override '{assignment}' is not of the form key=value")
    key, raw = assignment.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ConfigurationError(f"Override '{assignment}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Set dotted-path leaves of a raw configuration document."""
    for assignment in overrides:
        path, value = parse_override(assignment)
        node = document
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"Override '{assignment}' descends into a non-object")
            node = child
        node[path[-1]] = value
    return document


def load_run_config(path: Optional[str], overrides: Sequence[str] = ()) -> RunConfig:
    """
    Read, override and validate a run configuration.

    Args:
        path: JSON file; None starts from the schema defaults.
        overrides: "dotted.key=value" assignments applied before validation.

    Raises:
        StorageError: If the file cannot be read.
        ConfigurationError: If the document is malformed or fails validation.
    """
    document: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"Could not read config {path}: {exc}") from exc
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"Config {path} is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigurationError(f"Config {path} must hold a JSON object")
    document = apply_overrides(document, overrides)
    try:
        return RunConfig.model_validate(document)
    except ValidationError as exc:
        errors = [
            {"loc": ".".join(str(p) for p in e["loc"]), "msg": e["msg"]} for e in exc.errors()
        ]
        raise ConfigurationError("Invalid run configuration", payload={"errors": errors}) from exc
