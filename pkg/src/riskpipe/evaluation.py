"""Metrics and experiment harnesses (grouped CV, split-leakage audit)."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError
from .nn.model import ModelConfig, init_model, predict
from .nn.train import TrainingConfig, fit
from .pipeline import DatasetSplit, WindowSet, random_window_split, split_by_subject
from .risk import LABELS

log = logging.getLogger(__name__)

N_CLASSES = len(LABELS)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true label, columns = predicted label."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion_matrix(truth, predicted, n_classes: int = N_CLASSES) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise ValidationError(f"length mismatch: {truth.shape} vs {predicted.shape}")
    for arr in (truth, predicted):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValidationError("label outside the class range")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, predicted), 1)
    return ConfusionMatrix(counts)


@dataclass
class Metrics:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    # classes whose precision/recall had a zero denominator (reported as 0)
    undefined_precision: list[int] = field(default_factory=list)
    undefined_recall: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(cm: ConfusionMatrix) -> Metrics:
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise ValidationError("empty confusion matrix")
    diag = np.diag(c)
    col = c.sum(axis=0)
    row = c.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    return Metrics(
        float(diag.sum() / total),
        precision.tolist(),
        recall.tolist(),
        f1.tolist(),
        np.flatnonzero(col == 0).tolist(),
        np.flatnonzero(row == 0).tolist(),
    )


def binary_auc(scores, positive) -> float | None:
    """Mann-Whitney AUC with midranks; ``None`` if a side is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class AUCReport:
    per_class: list  # float or None (undefined)
    macro: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def roc_auc_ovr(probabilities, truth, n_classes: int = N_CLASSES) -> AUCReport:
    probs = np.asarray(probabilities, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if len(probs) == 0:
        raise ValidationError("no samples")
    if probs.shape != (len(truth), n_classes):
        raise ValidationError(f"probabilities must be (N, {n_classes})")
    per_class = [binary_auc(probs[:, k], truth == k) for k in range(n_classes)]
    defined = [a for a in per_class if a is not None]
    return AUCReport(per_class, float(np.mean(defined)) if defined else None)


def roc_curve(scores, positive) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds), one point per distinct score plus the origin."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positive[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(p)[last]
    fp = np.cumsum(~p)[last]
    n_pos, n_neg = max(p.sum(), 1), max((~p).sum(), 1)
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos], np.r_[np.inf, s[last]]


def write_roc_csvs(directory, probabilities, truth) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, label in enumerate(LABELS):
        fpr, tpr, thr = roc_curve(np.asarray(probabilities)[:, k], np.asarray(truth) == k)
        path = directory / f"roc_{label.name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for row in zip(thr, fpr, tpr):
                w.writerow([repr(float(v)) for v in row])
        paths.append(path)
    return paths


def grouped_kfold(subject_ids, k: int = 5, seed: int = 0) -> list[frozenset]:
    """Shuffle subjects by ``seed`` and deal them round-robin into ``k`` groups."""
    subjects = sorted(set(subject_ids))
    if k < 2:
        raise ValidationError("cross-validation needs k >= 2")
    if len(subjects) < k:
        raise ValidationError(f"{len(subjects)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(subjects))
    shuffled = [subjects[i] for i in order]
    return [frozenset(shuffled[j::k]) for j in range(k)]


def dataset_digest(windows: WindowSet) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(windows.X, dtype=np.float32).tobytes())
    h.update(np.asarray(windows.labels, dtype=np.int64).tobytes())
    h.update("\x00".join(map(str, windows.subject_ids)).encode())
    return h.hexdigest()


def config_fingerprint(model_cfg: ModelConfig, train_cfg: TrainingConfig, digest: str) -> str:
    blob = json.dumps({"model": model_cfg.to_dict(), "training": train_cfg.to_dict(), "dataset": digest}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class CVReport:
    fold_accuracies: list[float]
    mean: float
    std: float
    folds: list[list[str]]
    fingerprint: str = ""
    best_epochs: list[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CVReport":
        return cls(**json.loads(text))


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.default_rng([seed, fold]).integers(2**31))


def run_cv(windows: WindowSet, model_cfg: ModelConfig, train_cfg: TrainingConfig, k: int = 5, seed: int = 0) -> CVReport:
    """Subject-grouped k-fold CV; each fold's held-out group also drives its
    best-epoch checkpoint."""
    folds = grouped_kfold(windows.subject_ids, k, seed)
    subjects = set(windows.subjects)
    accs, best = [], []
    for j, val in enumerate(folds):
        train_subjects = subjects - val
        assert not (train_subjects & val)
        split = DatasetSplit(frozenset(train_subjects), val, seed)
        tr = windows.for_subjects(split.train_subjects)
        va = windows.for_subjects(split.val_subjects)
        cfg = TrainingConfig(**{**train_cfg.to_dict(), "seed": _fold_seed(train_cfg.seed, j)})
        bundle, history = fit(tr.X, tr.labels, va.X, va.labels, model_cfg, cfg)
        pred, _, _ = predict(bundle.params, va.X, model_cfg)
        accs.append(float(np.mean(pred == va.labels)))
        best.append(history.best_epoch)
        log.info("fold %d/%d: %d held-out subjects, accuracy %.4f", j + 1, k, len(val), accs[-1])
    arr = np.array(accs)
    return CVReport(
        accs,
        float(arr.mean()),
        float(arr.std()),
        [sorted(f) for f in folds],
        config_fingerprint(model_cfg, train_cfg, dataset_digest(windows)),
        best,
        {"model": model_cfg.to_dict(), "training": train_cfg.to_dict(), "k": k, "seed": seed},
    )


@dataclass
class LeakageReport:
    accuracy_random_split: float
    accuracy_subject_split: float
    gap: float
    seeds: dict
    corpus: dict
    fingerprint: str = ""

    def __post_init__(self):
        for acc in (self.accuracy_random_split, self.accuracy_subject_split):
            if not 0.0 <= acc <= 1.0:
                raise ValidationError("accuracy outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _accuracy(bundle, X, y) -> float:
    pred, _, _ = predict(bundle.params, X, bundle.config)
    return float(np.mean(pred == y))


def leakage_experiment(
    windows: WindowSet,
    model_cfg: ModelConfig,
    train_cfg: TrainingConfig,
    seed: int = 0,
    ratio: float = 0.8,
    random_split=None,
    subject_split=None,
) -> LeakageReport:
    """Train the same initialization twice: once on a window-level random
    split, once on a subject-level split, and compare held-out accuracy.

    ``random_split``/``subject_split`` default to the pipeline splitters and
    exist so the harness itself can be tested.
    """
    if len(windows.subjects) < 2:
        raise ValidationError("leakage experiment needs at least 2 subjects")
    random_split = random_split or (lambda ws, s: _random_indices(ws, ratio, s))
    subject_split = subject_split or (lambda ws, s: _subject_indices(ws, ratio, s))
    init = init_model(model_cfg, train_cfg.seed)

    def run(splitter):
        tr, te = splitter(windows, seed)
        bundle, _ = fit(windows.X[tr], windows.labels[tr], windows.X[te], windows.labels[te], model_cfg, train_cfg, init)
        return _accuracy(bundle, windows.X[te], windows.labels[te])

    acc_random = run(random_split)
    acc_subject = run(subject_split)
    return LeakageReport(
        acc_random,
        acc_subject,
        acc_random - acc_subject,
        {"split": seed, "training": train_cfg.seed},
        {"windows": len(windows), "subjects": len(windows.subjects), "histogram": windows.histogram()},
        config_fingerprint(model_cfg, train_cfg, dataset_digest(windows)),
    )


def _random_indices(windows: WindowSet, ratio: float, seed: int):
    return random_window_split(len(windows), ratio, seed)


def _subject_indices(windows: WindowSet, ratio: float, seed: int):
    split = split_by_subject(windows.subject_ids, ratio, seed)
    train_mask = np.isin(windows.subject_ids, list(split.train_subjects))
    return np.flatnonzero(train_mask), np.flatnonzero(~train_mask)


def evaluate_bundle(bundle, windows: WindowSet) -> dict:
    """Accuracy, per-class metrics, confusion matrix and AUCs on ``windows``."""
    if len(windows) == 0:
        raise ValidationError("nothing to evaluate")
    pred, conf, probs = predict(bundle.params, windows.X, bundle.config)
    cm = confusion_matrix(windows.labels, pred)
    m = metrics(cm)
    auc = roc_auc_ovr(probs, windows.labels)
    return {
        "windows": len(windows),
        "accuracy": m.accuracy,
        "metrics": m.to_dict(),
        "confusion_matrix": cm.to_list(),
        "auc": auc.to_dict(),
        "labels": [label.display for label in LABELS],
        "_probs": probs,
        "_pred": pred,
    }


def nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [nan_to_none(v) for v in obj]
    return obj
