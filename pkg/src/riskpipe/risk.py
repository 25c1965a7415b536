"""Deterministic risk heuristic used to label sensor windows.

Environmental readings are mapped to cognitive-performance scores through
step tables, heart rate and skin conductance (already min-max normalized
per subject) give a stress score, and the two are blended into an overall
score that is thresholded into one of four actions.

Every band is lower-inclusive and upper-exclusive; the top action band
also includes 1.0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import ValidationError

INF = math.inf


class RiskLabel(enum.IntEnum):
    RunAsUsual = 0
    ShowWarning = 1
    LimitAccess = 2
    InformBackupPerson = 3

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, text: str | int) -> "RiskLabel":
        """Accept the enum name, the display string, or the integer code."""
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        for label in cls:
            if text in (label.name, label.display):
                return label
        raise ValidationError(f"unknown risk label {text!r}")


_DISPLAY = {
    RiskLabel.RunAsUsual: "Run as usual",
    RiskLabel.ShowWarning: "Show warning",
    RiskLabel.LimitAccess: "Limit access",
    RiskLabel.InformBackupPerson: "Inform backup person",
}

LABELS: tuple[RiskLabel, ...] = tuple(RiskLabel)


Bands = tuple[tuple[float, float], ...]

TEMP_BANDS: Bands = ((18.0, 0.3), (20.0, 0.6), (24.0, 1.0), (26.0, 0.8), (28.0, 0.5), (INF, 0.2))
SOUND_BANDS: Bands = ((30.0, 1.0), (50.0, 0.9), (60.0, 0.7), (75.0, 0.4), (INF, 0.2))
LIGHT_BANDS: Bands = ((500.0, 0.2), (2000.0, 0.4), (10000.0, 1.0), (20000.0, 0.7), (INF, 0.3))


def _check_bands(name: str, bands: Bands) -> None:
    if not bands:
        raise ValidationError(f"{name}: at least one band required")
    uppers = [b[0] for b in bands]
    if uppers[-1] != INF:
        raise ValidationError(f"{name}: last band must be open-ended")
    if any(not a < b for a, b in zip(uppers, uppers[1:])):
        raise ValidationError(f"{name}: band bounds must be strictly increasing")
    if any(not 0.0 <= s <= 1.0 for _, s in bands):
        raise ValidationError(f"{name}: band scores must lie in [0, 1]")


@dataclass(frozen=True)
class ScoringConfig:
    temp_bands: Bands = TEMP_BANDS
    sound_bands: Bands = SOUND_BANDS
    light_bands: Bands = LIGHT_BANDS
    w_hr: float = 0.7
    w_gsr: float = 0.3
    w_stress: float = 0.7
    w_cognitive_complement: float = 0.3
    label_thresholds: tuple[float, float, float] = (0.25, 0.50, 0.75)

    def __post_init__(self):
        for name in ("temp_bands", "sound_bands", "light_bands"):
            bands = tuple((float(u), float(s)) for u, s in getattr(self, name))
            object.__setattr__(self, name, bands)
            _check_bands(name, bands)
        object.__setattr__(self, "label_thresholds", tuple(float(t) for t in self.label_thresholds))
        if abs(self.w_hr + self.w_gsr - 1.0) > 1e-12:
            raise ValidationError("w_hr + w_gsr must equal 1")
        if abs(self.w_stress + self.w_cognitive_complement - 1.0) > 1e-12:
            raise ValidationError("w_stress + w_cognitive_complement must equal 1")
        th = self.label_thresholds
        if len(th) != len(RiskLabel) - 1:
            raise ValidationError(f"need {len(RiskLabel) - 1} label thresholds")
        if not all(0.0 < t < 1.0 for t in th) or any(not a < b for a, b in zip(th, th[1:])):
            raise ValidationError("label thresholds must be strictly increasing inside (0, 1)")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name.endswith("_bands"):
                value = [[None if u == INF else u, s] for u, s in value]
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScoringConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown scoring keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key.endswith("_bands"):
                value = tuple((INF if u is None or u == "inf" else float(u), float(s)) for u, s in value)
            elif key == "label_thresholds":
                value = tuple(value)
            kwargs[key] = value
        return cls(**kwargs)


DEFAULT_SCORING = ScoringConfig()


@dataclass(frozen=True)
class RiskBreakdown:
    temp_score: float
    sound_score: float
    light_score: float
    cognitive_score: float
    stress_score: float
    overall_score: float
    label: RiskLabel = field(default=RiskLabel.RunAsUsual)


def _finite(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{what} must be finite, got {value}")
    return value


def _unit(value: float, what: str) -> float:
    value = _finite(value, what)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{what} must lie in [0, 1], got {value}")
    return value


def _lookup(value: float, bands: Bands) -> float:
    for upper, score in bands:
        if value < upper:
            return score
    raise AssertionError("open-ended last band not reached")  # pragma: no cover


def score_temperature(celsius: float, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    return _lookup(_finite(celsius, "temperature"), cfg.temp_bands)


def score_sound(db: float, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    db = _finite(db, "sound level")
    if db < 0:
        raise ValidationError(f"sound level must be >= 0, got {db}")
    return _lookup(db, cfg.sound_bands)


def score_light(lux: float, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    lux = _finite(lux, "illuminance")
    if lux < 0:
        raise ValidationError(f"illuminance must be >= 0, got {lux}")
    return _lookup(lux, cfg.light_bands)


def cognitive_score(temp_score: float, sound_score: float, light_score: float) -> float:
    a = _unit(temp_score, "temp_score")
    b = _unit(sound_score, "sound_score")
    c = _unit(light_score, "light_score")
    return (a + b + c) / 3.0


def stress_score(hr_norm: float, gsr_norm: float, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    return cfg.w_hr * _unit(hr_norm, "hr_norm") + cfg.w_gsr * _unit(gsr_norm, "gsr_norm")


def overall_score(stress: float, cognitive: float, cfg: ScoringConfig = DEFAULT_SCORING) -> float:
    stress = _unit(stress, "stress")
    cognitive = _unit(cognitive, "cognitive")
    value = cfg.w_stress * stress + cfg.w_cognitive_complement * (1.0 - cognitive)
    # weights sum to one, so only rounding can push past the unit interval
    return min(1.0, max(0.0, value))


def assign_label(overall: float, cfg: ScoringConfig = DEFAULT_SCORING) -> RiskLabel:
    overall = _unit(overall, "overall score")
    level = 0
    for threshold in cfg.label_thresholds:
        if overall >= threshold:
            level += 1
    return RiskLabel(level)


def sample_scores(temperature_c, sound_db, light_lux, hr_norm, gsr_norm, cfg=DEFAULT_SCORING):
    """Component and overall scores for one reading, as a 6-tuple."""
    t = score_temperature(temperature_c, cfg)
    s = score_sound(sound_db, cfg)
    li = score_light(light_lux, cfg)
    cog = cognitive_score(t, s, li)
    st = stress_score(hr_norm, gsr_norm, cfg)
    return t, s, li, cog, st, overall_score(st, cog, cfg)


def assess_window(
    raw_samples: Sequence,
    norm_hr: Sequence[float],
    norm_gsr: Sequence[float],
    cfg: ScoringConfig = DEFAULT_SCORING,
) -> RiskBreakdown:
    """Score a window sample-by-sample and label the window-mean overall score.

    ``raw_samples`` holds objects with ``temperature_c``, ``sound_db`` and
    ``light_lux`` attributes (e.g. ``SensorSample``).
    """
    n = len(raw_samples)
    if n == 0:
        raise ValidationError("empty window")
    if len(norm_hr) != n or len(norm_gsr) != n:
        raise ValidationError("window inputs differ in length")
    rows = np.array(
        [
            sample_scores(s.temperature_c, s.sound_db, s.light_lux, h, g, cfg)
            for s, h, g in zip(raw_samples, norm_hr, norm_gsr)
        ]
    )
    means = window_mean(rows.T)
    overall = min(1.0, max(0.0, float(means[5])))
    return RiskBreakdown(*map(float, means[:5]), overall, assign_label(overall, cfg))


# -- vectorized forms used when labelling whole series ----------------------

def window_mean(values: np.ndarray) -> np.ndarray:
    """Row means of ``values`` (N, W) by left-to-right summation.

    numpy's pairwise reductions reorder additions depending on memory
    layout; a fixed order keeps window labels bitwise reproducible.
    """
    values = np.asarray(values, dtype=np.float64)
    acc = values[:, 0].copy()
    for j in range(1, values.shape[1]):
        acc += values[:, j]
    return acc / values.shape[1]


def band_scores(values: np.ndarray, bands: Bands) -> np.ndarray:
    uppers = np.array([u for u, _ in bands])
    scores = np.array([s for _, s in bands])
    return scores[np.searchsorted(uppers, values, side="right")]


def overall_scores(
    temperature_c: np.ndarray,
    sound_db: np.ndarray,
    light_lux: np.ndarray,
    hr_norm: np.ndarray,
    gsr_norm: np.ndarray,
    cfg: ScoringConfig = DEFAULT_SCORING,
) -> np.ndarray:
    """Per-sample overall scores; bitwise equal to the scalar path."""
    arrays = [np.asarray(a, dtype=np.float64) for a in (temperature_c, sound_db, light_lux, hr_norm, gsr_norm)]
    if not all(np.isfinite(a).all() for a in arrays):
        raise ValidationError("non-finite value in scoring input")
    temp, sound, light, hr, gsr = arrays
    if (sound < 0).any() or (light < 0).any():
        raise ValidationError("sound and light must be >= 0")
    if ((hr < 0) | (hr > 1) | (gsr < 0) | (gsr > 1)).any():
        raise ValidationError("normalized HR/GSR must lie in [0, 1]")
    cog = (band_scores(temp, cfg.temp_bands) + band_scores(sound, cfg.sound_bands) + band_scores(light, cfg.light_bands)) / 3.0
    st = cfg.w_hr * hr + cfg.w_gsr * gsr
    return np.clip(cfg.w_stress * st + cfg.w_cognitive_complement * (1.0 - cog), 0.0, 1.0)


def labels_for(overall: np.ndarray, cfg: ScoringConfig = DEFAULT_SCORING) -> np.ndarray:
    overall = np.asarray(overall, dtype=np.float64)
    return np.searchsorted(np.array(cfg.label_thresholds), overall, side="right").astype(np.int64)
