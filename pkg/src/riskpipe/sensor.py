"""Virtual sensor node: scenario-driven synthetic telemetry.

Each feature follows the current phase target (with a linear ramp across
phase boundaries), shifted by a per-subject baseline offset, plus AR(1)
noise, clipped to a plausible range. The same generator feeds the 1 Hz
streamer and the offline corpus writer.
"""

from __future__ import annotations

import json
import logging
import time
import urllib.error
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .httpjson import request_json
from .pipeline import FEATURES, SensorSample, SubjectSeries, write_csv

log = logging.getLogger(__name__)

CLIP_RANGES = {
    "heart_rate_bpm": (40.0, 180.0),
    "gsr_us": (0.1, 20.0),
    "temperature_c": (10.0, 40.0),
    "light_lux": (0.0, 120000.0),
    "sound_db": (20.0, 110.0),
}


@dataclass(frozen=True)
class Phase:
    name: str
    duration_s: int
    targets: dict
    noise: dict

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValidationError(f"phase {self.name!r}: duration must be positive")
        for f in FEATURES:
            if f not in self.targets or f not in self.noise:
                raise ValidationError(f"phase {self.name!r}: missing target/noise for {f}")
            if self.noise[f] < 0:
                raise ValidationError(f"phase {self.name!r}: negative noise scale for {f}")


# Phase centres sit in distinct temperature/sound/light bands of the
# scoring tables. Noise values are AR(1) innovation standard deviations.
_CALM = dict(heart_rate_bpm=70.0, gsr_us=2.0, temperature_c=22.0, light_lux=5000.0, sound_db=40.0)
_FOCUS = dict(heart_rate_bpm=80.0, gsr_us=4.0, temperature_c=25.0, light_lux=1200.0, sound_db=55.0)
_STRESS = dict(heart_rate_bpm=100.0, gsr_us=8.0, temperature_c=29.0, light_lux=15000.0, sound_db=80.0)
_ACUTE = dict(heart_rate_bpm=115.0, gsr_us=12.0, temperature_c=31.0, light_lux=30000.0, sound_db=90.0)
_NOISE = dict(heart_rate_bpm=1.2, gsr_us=0.15, temperature_c=0.08, light_lux=150.0, sound_db=1.0)

PHASE_LIBRARY = {
    "calm": (_CALM, _NOISE),
    "focus": (_FOCUS, _NOISE),
    "stress": (_STRESS, _NOISE),
    "acute": (_ACUTE, _NOISE),
}

# spread of per-subject offsets (uniform half-widths)
OFFSET_SPREAD = dict(heart_rate_bpm=12.0, gsr_us=1.0, temperature_c=0.6, light_lux=400.0, sound_db=2.0)

# Per-subject individuality applied to every phase centre except the calm
# baseline: physiological reactivity scales the rise above calm, and the
# environment a subject meets in a given phase kind is shifted (lux on a log
# scale). Fixed per subject, so it is a signature inside one subject and a
# source of error across subjects.
REACTIVITY_RANGE = (0.55, 1.45)
ENV_JITTER = dict(temperature_c=3.0, sound_db=10.0, light_lux=1.0)


@dataclass(frozen=True)
class Scenario:
    phases: tuple[Phase, ...]
    baseline_offsets: dict = field(default_factory=lambda: {f: 0.0 for f in FEATURES})
    phi: float = 0.9
    clip_ranges: dict = field(default_factory=lambda: dict(CLIP_RANGES))
    ramp_s: int = 10
    seed: int = 0
    subject_id: str = "S01"

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(p if isinstance(p, Phase) else Phase(**p) for p in self.phases))
        if not self.phases:
            raise ValidationError("scenario needs at least one phase")
        if not 0.0 <= self.phi < 1.0:
            raise ValidationError("noise persistence phi must lie in [0, 1)")
        for f in FEATURES:
            lo, hi = self.clip_ranges[f]
            for p in self.phases:
                if not lo <= p.targets[f] <= hi:
                    raise ValidationError(f"phase {p.name!r}: target {f} outside clip range")

    @property
    def duration_s(self) -> int:
        return sum(p.duration_s for p in self.phases)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        data = dict(data)
        data["phases"] = tuple(Phase(**p) for p in data["phases"])
        if "clip_ranges" in data:
            data["clip_ranges"] = {k: tuple(v) for k, v in data["clip_ranges"].items()}
        return cls(**data)

    @classmethod
    def load(cls, name_or_path: str) -> "Scenario":
        if name_or_path in BUILTIN_SCENARIOS:
            return BUILTIN_SCENARIOS[name_or_path]()
        path = Path(name_or_path)
        if not path.is_file():
            raise ValidationError(f"unknown scenario {name_or_path!r} (not a builtin, no such file)")
        return cls.from_dict(json.loads(path.read_text()))


def make_phase(kind: str, duration_s: int) -> Phase:
    targets, noise = PHASE_LIBRARY[kind]
    return Phase(kind, int(duration_s), dict(targets), dict(noise))


def two_phase(seed: int = 0, calm_s: int = 90, stress_s: int = 90) -> Scenario:
    """Relaxed start followed by a stress event; 180 s by default."""
    return Scenario((make_phase("calm", calm_s), make_phase("stress", stress_s)), seed=seed)


BUILTIN_SCENARIOS = {"two-phase": two_phase}


class GeneratorState:
    """Mutable AR(1) state; advance it with :func:`generate_sample`."""

    def __init__(self, scenario: Scenario):
        self.rng = np.random.default_rng(scenario.seed)
        self.noise = np.zeros(len(FEATURES))


def target_at(scenario: Scenario, t: float) -> np.ndarray:
    """Phase target at time ``t`` with a linear ramp from the previous phase."""
    bounds = np.cumsum([p.duration_s for p in scenario.phases])
    k = int(np.searchsorted(bounds, t, side="right"))
    k = min(k, len(scenario.phases) - 1)
    current = np.array([scenario.phases[k].targets[f] for f in FEATURES])
    start = bounds[k - 1] if k else 0
    if k and scenario.ramp_s > 0 and t - start < scenario.ramp_s:
        previous = np.array([scenario.phases[k - 1].targets[f] for f in FEATURES])
        frac = (t - start) / scenario.ramp_s
        return previous + (current - previous) * frac
    return current


def _noise_scale(scenario: Scenario, t: float) -> np.ndarray:
    bounds = np.cumsum([p.duration_s for p in scenario.phases])
    k = min(int(np.searchsorted(bounds, t, side="right")), len(scenario.phases) - 1)
    return np.array([scenario.phases[k].noise[f] for f in FEATURES])


def generate_sample(scenario: Scenario, t: int, state: GeneratorState) -> SensorSample:
    """Next reading of the stream; call with t = 0, 1, 2, ... in order."""
    if not 0 <= t < scenario.duration_s:
        raise ValidationError(f"t={t} outside scenario duration {scenario.duration_s} s")
    eps = state.rng.standard_normal(len(FEATURES)) * _noise_scale(scenario, t)
    state.noise = scenario.phi * state.noise + eps
    offsets = np.array([scenario.baseline_offsets.get(f, 0.0) for f in FEATURES])
    value = target_at(scenario, t) + offsets + state.noise
    lo = np.array([scenario.clip_ranges[f][0] for f in FEATURES])
    hi = np.array([scenario.clip_ranges[f][1] for f in FEATURES])
    value = np.clip(value, lo, hi)
    return SensorSample(scenario.subject_id, int(t), *map(float, value))


def simulate(scenario: Scenario) -> SubjectSeries:
    state = GeneratorState(scenario)
    samples = [generate_sample(scenario, t, state) for t in range(scenario.duration_s)]
    return SubjectSeries.from_samples(samples)


def subject_scenario(subject_id: str, duration_s: int, seed: int, library=PHASE_LIBRARY, min_phase_s: int = 90, max_phase_s: int = 360) -> Scenario:
    """Random phase mix for one synthetic subject.

    Sessions open with a calm phase; later phases are drawn uniformly from
    ``library``, and the last one is truncated to fit ``duration_s``.
    """
    rng = np.random.default_rng(seed)
    offsets = {f: float(rng.uniform(-s, s)) for f, s in OFFSET_SPREAD.items()}
    kinds = list(library)
    baseline = library["calm"][0] if "calm" in library else library[kinds[0]][0]
    personal = {}
    for kind in kinds:
        targets = dict(library[kind][0])
        if targets != baseline:
            for f in ("heart_rate_bpm", "gsr_us"):
                targets[f] = baseline[f] + rng.uniform(*REACTIVITY_RANGE) * (targets[f] - baseline[f])
            targets["temperature_c"] += rng.uniform(-1, 1) * ENV_JITTER["temperature_c"]
            targets["sound_db"] += rng.uniform(-1, 1) * ENV_JITTER["sound_db"]
            targets["light_lux"] *= float(np.exp(rng.uniform(-1, 1) * ENV_JITTER["light_lux"]))
        personal[kind] = targets
    phases = []
    remaining = duration_s
    kind = "calm" if "calm" in library else kinds[0]
    while remaining > 0:
        dur = min(int(rng.integers(min_phase_s, max_phase_s + 1)), remaining)
        phases.append(Phase(kind, dur, dict(personal[kind]), dict(library[kind][1])))
        remaining -= dur
        kind = kinds[int(rng.integers(len(kinds)))]
    return Scenario(tuple(phases), baseline_offsets=offsets, seed=int(rng.integers(2**31)), subject_id=subject_id)


def generate_corpus(path, n_subjects: int = 14, minutes: float = 43, seed: int = 0, library=PHASE_LIBRARY) -> list[SubjectSeries]:
    """Write ``n_subjects`` synthetic sessions to ``path`` in the pipeline CSV
    format and return them."""
    duration = int(round(minutes * 60))
    if n_subjects < 1 or duration < 1:
        raise ValidationError("need at least one subject and a positive duration")
    seeds = np.random.default_rng(seed).integers(2**31, size=n_subjects)
    series = []
    for i, s in enumerate(seeds):
        scenario = subject_scenario(f"S{i + 1:02d}", duration, int(s), library)
        series.append(_rounded(simulate(scenario)))
    path = Path(path)
    try:
        write_csv(path, series)
    except OSError as exc:
        raise OSError(f"cannot write corpus to {path}: {exc}") from exc
    return series


def _rounded(series: SubjectSeries) -> SubjectSeries:
    # what a CSV round trip at 3 decimals would give back
    return SubjectSeries(series.subject_id, series.timestamps, np.round(series.values, 3))


@dataclass
class StreamReport:
    sent: int = 0
    acked: int = 0
    failed: int = 0
    aborted: bool = False
    max_drift_s: float = 0.0
    tick_times: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "tick_times"}


def stream(
    gateway_url: str,
    scenario: Scenario,
    rate_hz: float = 1.0,
    duration_s: int | None = None,
    max_consecutive_failures: int = 3,
    clock=time.monotonic,
    sleep=time.sleep,
) -> StreamReport:
    """POST one reading per tick to ``{gateway_url}/ingest``.

    Tick ``n`` is scheduled at ``start + n / rate_hz`` so lateness never
    accumulates. Aborts after ``max_consecutive_failures`` failed sends.
    """
    if rate_hz <= 0:
        raise ValidationError("rate must be positive")
    total = scenario.duration_s if duration_s is None else min(duration_s, scenario.duration_s)
    url = gateway_url.rstrip("/") + "/ingest"
    state = GeneratorState(scenario)
    report = StreamReport()
    consecutive = 0
    start = clock()
    for n in range(total):
        due = start + n / rate_hz
        delay = due - clock()
        if delay > 0:
            sleep(delay)
        fired = clock()
        report.tick_times.append(fired - start)
        report.max_drift_s = max(report.max_drift_s, abs(fired - due))
        sample = generate_sample(scenario, n, state)
        report.sent += 1
        try:
            status, _ = request_json("POST", url, asdict(sample), timeout=max(1.0, 2.0 / rate_hz))
            ok = 200 <= status < 300
        except (urllib.error.URLError, OSError) as exc:
            log.warning("tick %d: %s", n, exc)
            ok = False
        if ok:
            report.acked += 1
            consecutive = 0
        else:
            report.failed += 1
            consecutive += 1
            if consecutive >= max_consecutive_failures:
                report.aborted = True
                log.error("gateway unreachable after %d attempts, aborting", consecutive)
                break
    return report
