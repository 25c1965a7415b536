"""Preprocessing: CSV ingestion, cleaning, per-subject scaling, windowing,
window labelling and train/validation splitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .risk import DEFAULT_SCORING, RiskLabel, ScoringConfig, labels_for, overall_scores, window_mean

log = logging.getLogger(__name__)

FEATURES = ("heart_rate_bpm", "gsr_us", "temperature_c", "light_lux", "sound_db")
HR, GSR, TEMP, LUX, SOUND = range(5)
WINDOW = 30

DEFAULT_COLUMNS = {
    "subject_id": "subject_id",
    "timestamp_s": "timestamp_s",
    **{f: f for f in FEATURES},
}

_NULL_TOKENS = {"", "na", "nan", "null", "none", "n/a"}


@dataclass(frozen=True)
class SensorSample:
    subject_id: str
    timestamp_s: int
    heart_rate_bpm: float
    gsr_us: float
    temperature_c: float
    light_lux: float
    sound_db: float

    def features(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in FEATURES)

    @property
    def corrupt(self) -> bool:
        return not all(math.isfinite(v) for v in self.features())


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def of(cls, values: np.ndarray) -> "FeatureStats":
        return cls(values.mean(axis=0), values.std(axis=0), values.min(axis=0), values.max(axis=0))


@dataclass
class SubjectSeries:
    """One subject's readings as an (L, 5) array in ``FEATURES`` order."""

    subject_id: str
    timestamps: np.ndarray
    values: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, len(FEATURES))
        if len(self.timestamps) != len(self.values):
            raise ValidationError("timestamps and values differ in length")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def stats(self) -> FeatureStats:
        return FeatureStats.of(self.values)

    def samples(self) -> Iterator[SensorSample]:
        for t, row in zip(self.timestamps, self.values):
            yield SensorSample(self.subject_id, int(t), *map(float, row))

    @classmethod
    def from_samples(cls, samples: list[SensorSample]) -> "SubjectSeries":
        if not samples:
            raise ValidationError("no samples")
        return cls(
            samples[0].subject_id,
            [s.timestamp_s for s in samples],
            [s.features() for s in samples],
        )


def _parse_float(text: str) -> float:
    if text.strip().lower() in _NULL_TOKENS:
        return math.nan
    return float(text)


def load_csv(path, column_mapping: Mapping[str, str] | None = None, report: dict | None = None) -> list[SubjectSeries]:
    """Read a sensor CSV into per-subject series sorted by timestamp.

    ``column_mapping`` maps canonical field names to CSV headers. Missing or
    null feature values are kept as NaN (``clean`` removes them); rows whose
    subject, timestamp or values cannot be parsed at all are skipped and
    counted in ``report["skipped_rows"]``.
    """
    mapping = dict(DEFAULT_COLUMNS)
    mapping.update(column_mapping or {})
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")

    rows: dict[str, list[tuple[int, list[float]]]] = {}
    skipped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in DEFAULT_COLUMNS:
            if mapping[key] not in header:
                raise ValidationError(f"missing column {mapping[key]!r} (for {key})")
        for raw in reader:
            try:
                subject = raw[mapping["subject_id"]].strip()
                ts = float(raw[mapping["timestamp_s"]])
                vals = [_parse_float(raw[mapping[f]]) for f in FEATURES]
                if not subject or not math.isfinite(ts):
                    raise ValueError
            except (TypeError, ValueError, AttributeError):
                skipped += 1
                continue
            rows.setdefault(subject, []).append((int(round(ts)), vals))

    if report is not None:
        report["skipped_rows"] = skipped
    if skipped:
        log.warning("%s: skipped %d unparseable rows", path, skipped)
    if not rows:
        raise ValidationError(f"{path}: zero usable rows")

    out = []
    for subject in sorted(rows):
        entries = sorted(rows[subject], key=lambda e: e[0])
        out.append(SubjectSeries(subject, [e[0] for e in entries], [e[1] for e in entries]))
    return out


def write_csv(path, series: list[SubjectSeries]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "timestamp_s", *FEATURES])
        for s in series:
            for t, row in zip(s.timestamps, s.values):
                writer.writerow([s.subject_id, int(t), *(repr(float(v)) for v in row)])


def clean(series: SubjectSeries) -> SubjectSeries:
    """List-wise deletion of any row with a non-finite value, then re-index
    the survivors onto a contiguous 1 Hz grid (no interpolation)."""
    keep = np.isfinite(series.values).all(axis=1)
    if not keep.any():
        raise ValidationError(f"subject {series.subject_id}: empty after cleaning")
    dropped = int((~keep).sum())
    if dropped:
        log.info("subject %s: dropped %d corrupt rows", series.subject_id, dropped)
    values = series.values[keep]
    return SubjectSeries(series.subject_id, np.arange(len(values)), values.copy(), dropped=series.dropped + dropped)


def zscore(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise z-score with population std; constant columns become 0."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValidationError("cannot standardize an empty series")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    # a spread too small for the std to register (subnormals) counts as constant
    constant = (np.ptp(values, axis=0) == 0) | (std == 0)
    safe = np.where(constant, 1.0, std)
    out = (values - mean) / safe
    out[:, constant] = 0.0
    return out, mean, std


def zscore_per_subject(series: SubjectSeries) -> tuple[np.ndarray, FeatureStats]:
    z, _, _ = zscore(series.values)
    return z, series.stats


def minmax_per_subject(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("cannot normalize an empty series")
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    # clip guards the last-ulp overshoot of (x - lo) / (hi - lo)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


@dataclass
class WindowSet:
    """A batch of 30x5 windows plus their provenance.

    ``labels`` is -1 for windows that have not been labelled yet.
    """

    X: np.ndarray
    subject_ids: np.ndarray
    start_index: np.ndarray
    labels: np.ndarray = field(default=None)
    scores: np.ndarray = field(default=None)

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids, dtype=object)
        self.start_index = np.asarray(self.start_index, dtype=np.int64)
        n = len(self.X)
        if self.labels is None:
            self.labels = np.full(n, -1, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores is None:
            self.scores = np.full(n, np.nan)
        if not (len(self.subject_ids) == len(self.start_index) == len(self.labels) == n):
            raise ValidationError("window set fields differ in length")

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, idx) -> "FeatureWindow":
        return FeatureWindow(self.X[idx], self.subject_ids[idx], int(self.start_index[idx]), RiskLabel(self.labels[idx]) if self.labels[idx] >= 0 else None)

    def subset(self, mask) -> "WindowSet":
        return WindowSet(self.X[mask], self.subject_ids[mask], self.start_index[mask], self.labels[mask], self.scores[mask])

    def for_subjects(self, subjects) -> "WindowSet":
        return self.subset(np.isin(self.subject_ids, list(subjects)))

    @property
    def subjects(self) -> list[str]:
        return sorted(set(self.subject_ids.tolist()))

    @classmethod
    def concat(cls, parts: list["WindowSet"]) -> "WindowSet":
        if not parts:
            return cls(np.zeros((0, WINDOW, len(FEATURES))), [], [])
        return cls(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.subject_ids for p in parts]),
            np.concatenate([p.start_index for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.scores for p in parts]),
        )

    def histogram(self) -> dict[str, int]:
        counts = np.bincount(self.labels[self.labels >= 0], minlength=len(RiskLabel))
        return {label.display: int(counts[label]) for label in RiskLabel}


@dataclass(frozen=True)
class FeatureWindow:
    matrix: np.ndarray
    subject_id: str
    start_index: int
    label: RiskLabel | None = None


def segment(values: np.ndarray, subject_id: str = "", window: int = WINDOW, stride: int = 1) -> WindowSet:
    """Overlapping windows; window ``i`` covers rows ``[i*stride, i*stride + window)``."""
    values = np.asarray(values)
    if len(values) < window:
        raise ValidationError(f"series of length {len(values)} is shorter than one window ({window})")
    view = sliding_window_view(values, window, axis=0)[::stride]  # (N, F, W)
    X = np.ascontiguousarray(view.transpose(0, 2, 1))
    starts = np.arange(len(X)) * stride
    return WindowSet(X, np.full(len(X), subject_id, dtype=object), starts)


def window_scores(raw_values: np.ndarray, norm_hr, norm_gsr, starts, window: int = WINDOW, cfg: ScoringConfig = DEFAULT_SCORING) -> np.ndarray:
    """Window-mean overall score for each start index."""
    starts = np.asarray(starts, dtype=np.int64)
    if len(starts) and (starts.min() < 0 or starts.max() + window > len(raw_values)):
        raise ValidationError("window index out of range of the raw series")
    per_sample = overall_scores(raw_values[:, TEMP], raw_values[:, SOUND], raw_values[:, LUX], norm_hr, norm_gsr, cfg)
    spans = sliding_window_view(per_sample, window)[starts]
    return np.clip(window_mean(spans), 0.0, 1.0)


def label_windows(windows: WindowSet, raw: SubjectSeries, norm_hr, norm_gsr, cfg: ScoringConfig = DEFAULT_SCORING) -> WindowSet:
    """Attach labels computed from the raw physical values; the stored
    matrices stay standardized."""
    width = windows.X.shape[1]
    scores = window_scores(raw.values, norm_hr, norm_gsr, windows.start_index, width, cfg)
    return WindowSet(windows.X, windows.subject_ids, windows.start_index, labels_for(scores, cfg), scores)


def prepare_subject(series: SubjectSeries, cfg: ScoringConfig = DEFAULT_SCORING, window: int = WINDOW) -> WindowSet:
    """clean -> z-score -> segment -> label for one subject."""
    cleaned = clean(series)
    z, _ = zscore_per_subject(cleaned)
    hr = minmax_per_subject(cleaned.values[:, HR])
    gsr = minmax_per_subject(cleaned.values[:, GSR])
    windows = segment(z, cleaned.subject_id, window)
    return label_windows(windows, cleaned, hr, gsr, cfg)


def build_dataset(series: list[SubjectSeries], cfg: ScoringConfig = DEFAULT_SCORING, window: int = WINDOW) -> WindowSet:
    """Labelled windows for every subject, ordered by subject id then start.

    Subjects too short for one window after cleaning are skipped with a warning.
    """
    parts = []
    for s in sorted(series, key=lambda s: s.subject_id):
        try:
            parts.append(prepare_subject(s, cfg, window))
        except ValidationError as exc:
            log.warning("subject %s skipped: %s", s.subject_id, exc)
    if not parts:
        raise ValidationError("no subject produced a window")
    return WindowSet.concat(parts)


@dataclass(frozen=True)
class DatasetSplit:
    train_subjects: frozenset
    val_subjects: frozenset
    seed: int

    def __post_init__(self):
        if self.train_subjects & self.val_subjects:
            raise ValidationError("train and validation subjects overlap")


def split_by_subject(subject_ids, ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    subjects = sorted(set(subject_ids))
    if len(subjects) < 2:
        raise ValidationError("need at least 2 subjects to split")
    order = np.random.default_rng(seed).permutation(len(subjects))
    n_train = math.floor(ratio * len(subjects))
    n_train = min(max(n_train, 1), len(subjects) - 1)
    shuffled = [subjects[i] for i in order]
    return DatasetSplit(frozenset(shuffled[:n_train]), frozenset(shuffled[n_train:]), seed)


def random_window_split(n_windows: int, ratio: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Index split that ignores subjects entirely.

    Deliberately leaky: overlapping windows of one subject land on both
    sides. Only the leakage experiment should use it.
    """
    if n_windows < 2:
        raise ValidationError("need at least 2 windows to split")
    order = np.random.default_rng(seed).permutation(n_windows)
    n_train = min(max(math.floor(ratio * n_windows), 1), n_windows - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def save_dataset(windows: WindowSet, path, extra: dict | None = None) -> bytes:
    """Store labelled windows in the shared binary container; returns the bytes."""
    from .nn.modelfile import dump_container

    subjects = windows.subjects
    index = {s: i for i, s in enumerate(subjects)}
    manifest = {
        "kind": "dataset",
        "features": list(FEATURES),
        "subjects": subjects,
        "histogram": windows.histogram(),
        **(extra or {}),
    }
    data = dump_container(
        manifest,
        {
            "X": windows.X,
            "labels": windows.labels,
            "start_index": windows.start_index,
            "subject_index": np.array([index[s] for s in windows.subject_ids]),
            "scores": windows.scores,
        },
    )
    Path(path).write_bytes(data)
    return data


def load_dataset(path) -> WindowSet:
    from .nn.modelfile import ModelFileError, parse_container

    manifest, t = parse_container(Path(path).read_bytes())
    if manifest.get("kind") != "dataset":
        raise ModelFileError(f"container holds a {manifest.get('kind')!r}, not a dataset")
    subjects = np.array(manifest["subjects"], dtype=object)
    return WindowSet(
        t["X"],
        subjects[t["subject_index"].astype(np.int64)],
        t["start_index"].astype(np.int64),
        t["labels"].astype(np.int64),
        t["scores"].astype(np.float64),
    )


def write_window_summary(windows: WindowSet, path) -> None:
    """CSV export, one row per window."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "start_index", "overall_score", "label"])
        for sid, start, score, label in zip(windows.subject_ids, windows.start_index, windows.scores, windows.labels):
            w.writerow([sid, int(start), repr(float(score)), RiskLabel(int(label)).display if label >= 0 else ""])
