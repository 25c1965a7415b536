"""Risk labelling, CNN-LSTM classification and session serving for wearable
telemetry."""

from .errors import ConfigError, ValidationError
from .risk import DEFAULT_SCORING, RiskLabel, ScoringConfig, assess_window, assign_label, overall_score

__all__ = [
    "ConfigError",
    "DEFAULT_SCORING",
    "RiskLabel",
    "ScoringConfig",
    "ValidationError",
    "assess_window",
    "assign_label",
    "overall_score",
]
__version__ = "0.1.0"
