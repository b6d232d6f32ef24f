"""Application configuration: one JSON file covering paths, model, training,
generation, and service settings. Unknown keys are rejected at every level so
typos fail loudly instead of silently running defaults.

Resolution order for the file path: explicit --config flag, then the
LADBNET_CONFIG environment variable, then built-in defaults.
"""

import dataclasses
import json
import os

from .data import GeneratorProfile
from .errors import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig

ENV_VAR = "LADBNET_CONFIG"


def _model_config_from(raw: dict) -> ModelConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError(f"model_config must be an object, got {type(raw).__name__}")
    allowed = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigurationError(f"unknown model_config keys: {sorted(unknown)}")
    return ModelConfig(**raw)


@dataclasses.dataclass
class AppConfig:
    data: str = "data.csv"
    model: str = "model.ladb"
    calendar: str | None = None
    port: int = 8473
    seed: int = 0
    ratios: tuple = (0.70, 0.15, 0.15)
    eval_per_step: bool = False  # pool steps 1..k per horizon unless set
    rows: int = 90_720
    calibration_windows: int = 1000
    model_config: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train_config: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    generator: GeneratorProfile = dataclasses.field(default_factory=GeneratorProfile)

    def __post_init__(self):
        self.ratios = tuple(self.ratios)
        if not 1 <= self.port <= 65535:
            raise ConfigurationError(f"port must be in [1, 65535], got {self.port}")
        if self.rows < 1:
            raise ConfigurationError(f"rows must be >= 1, got {self.rows}")
        if self.calibration_windows < 1:
            raise ConfigurationError(
                f"calibration_windows must be >= 1, got {self.calibration_windows}"
            )

    @classmethod
    def from_dict(cls, raw: dict) -> "AppConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config root must be an object, got {type(raw).__name__}")
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "model_config" in kwargs:
            kwargs["model_config"] = _model_config_from(kwargs["model_config"])
        if "train_config" in kwargs:
            kwargs["train_config"] = TrainConfig.from_dict(kwargs["train_config"])
        if "generator" in kwargs:
            kwargs["generator"] = GeneratorProfile.from_dict(kwargs["generator"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["ratios"] = list(self.ratios)
        out["model_config"] = self.model_config.to_dict()
        out["train_config"] = self.train_config.to_dict()
        out["generator"] = dataclasses.asdict(self.generator)
        return out


def load_app_config(path=None) -> AppConfig:
    """Load the JSON config from path, LADBNET_CONFIG, or defaults."""
    path = path or os.environ.get(ENV_VAR)
    if path is None:
        return AppConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    try:
        return AppConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigurationError(f"config file {path}: {exc}") from exc
