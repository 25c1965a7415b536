from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, ValidationError
from .nn.model import ModelConfig
from .nn.train import TrainingConfig
from .risk import ScoringConfig


@dataclass
class RunConfig:
    """Everything a CLI run needs; loaded from JSON, overridden by flags."""

    dataset_csv: str | None = None
    dataset: str = "data/windows.benv"
    model: str = "data/model.benv"
    reports_dir: str = "reports"
    columns: dict = field(default_factory=dict)
    scoring: dict = field(default_factory=dict)
    model_config: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    inference_host: str = "127.0.0.1"
    inference_port: int = 5000
    gateway_host: str = "127.0.0.1"
    gateway_port: int = 8080
    inference_url: str = "http://localhost:5000"
    gateway_url: str = "http://localhost:8080"
    threshold: int = 180
    single_session: bool = False
    seed: int = 0

    @classmethod
    def load(cls, path=None, **overrides) -> "RunConfig":
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError as exc:
                raise ConfigError(f"config file not found: {path}") from exc
            except ValueError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.scoring_config()
            self.model_cfg()
            self.training_cfg()
        except (ValidationError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def scoring_config(self) -> ScoringConfig:
        return ScoringConfig.from_dict(self.scoring)

    def model_cfg(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model_config)

    def training_cfg(self) -> TrainingConfig:
        return TrainingConfig.from_dict({"seed": self.seed, **self.training})

    def effective(self) -> dict:
        """Fully-resolved configuration echoed into reports."""
        out = asdict(self)
        out["scoring"] = self.scoring_config().to_dict()
        out["model_config"] = self.model_cfg().to_dict()
        out["training"] = self.training_cfg().to_dict()
        return out
