from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..risk import LABELS
from .model import PARAM_NAMES, ModelConfig, Params, backward, forward, init_model, loss, one_hot, predict_proba, argmax_high

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 30
    seed: int = 0
    deterministic_mode: bool = True
    # stop after this many epochs without a new best validation accuracy
    patience: int | None = None
    class_weighting: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch_size and max_epochs must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc)])

    @classmethod
    def from_csv(cls, path) -> "TrainingHistory":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        records = [EpochRecord(int(r["epoch"]), *(float(r[k]) for k in ("train_loss", "train_acc", "val_loss", "val_acc"))) for r in rows]
        best = max(records, key=lambda r: r.val_acc).epoch if records else 0
        return cls(records, best)

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch, "records": [asdict(r) for r in self.records]}


@dataclass
class ModelBundle:
    """Everything needed to serve a trained model."""

    config: ModelConfig
    params: Params
    labels: tuple[str, ...] = tuple(label.display for label in LABELS)
    metadata: dict = field(default_factory=dict)
    # SHA-256 of the serialized file; set by save_model/load_model
    fingerprint: str = ""

    def predict(self, windows: np.ndarray):
        from .model import predict

        return predict(self.params, windows, self.config)


class Adam:
    def __init__(self, params: Params, cfg: TrainingConfig):
        self.cfg = cfg
        self.m = {n: np.zeros_like(p) for n, p in params.items()}
        self.v = {n: np.zeros_like(p) for n, p in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        cfg = self.cfg
        self.t += 1
        lr_t = cfg.learning_rate * np.sqrt(1 - cfg.beta2**self.t) / (1 - cfg.beta1**self.t)
        for name in PARAM_NAMES:
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            params[name] -= (lr_t * m / (np.sqrt(v) + cfg.epsilon)).astype(params[name].dtype)


def class_weights_for(labels, num_classes: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    weights = np.where(counts > 0, len(labels) / (num_classes * np.maximum(counts, 1)), 0.0)
    return weights


def evaluate(params: Params, X: np.ndarray, y: np.ndarray, config: ModelConfig, class_weights=None) -> tuple[float, float]:
    """(loss, accuracy) in inference mode."""
    probs = predict_proba(params, X, config)
    Y = one_hot(y, config.num_classes)
    return loss(probs, Y, params, config.l2_lambda, class_weights), float(np.mean(argmax_high(probs) == y))


def fit(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    model_cfg: ModelConfig,
    train_cfg: TrainingConfig,
    init_params: Params | None = None,
) -> tuple[ModelBundle, TrainingHistory]:
    """Mini-batch Adam; returns the parameters of the best validation epoch."""
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValidationError("training and validation sets must be non-empty")
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if (y_train < 0).any() or (y_val < 0).any():
        raise ValidationError("unlabelled windows in training data")
    X_train = np.asarray(X_train, dtype=np.float32)
    X_val = np.asarray(X_val, dtype=np.float32)

    params = init_model(model_cfg, train_cfg.seed) if init_params is None else {n: p.copy() for n, p in init_params.items()}
    opt = Adam(params, train_cfg)
    rng = np.random.default_rng([train_cfg.seed, 1])
    cw = class_weights_for(y_train, model_cfg.num_classes) if train_cfg.class_weighting else None
    Y_train = one_hot(y_train, model_cfg.num_classes, np.float32)

    history = TrainingHistory()
    best_acc, best_params, stale = -1.0, None, 0
    n = len(X_train)
    for epoch in range(1, train_cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = correct = 0.0
        for s in range(0, n, train_cfg.batch_size):
            idx = order[s : s + train_cfg.batch_size]
            probs, cache = forward(params, X_train[idx], model_cfg, train_mode=True, dropout_seed=int(rng.integers(2**63)))
            batch_loss = loss(probs, Y_train[idx], params, model_cfg.l2_lambda, cw)
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {s}")
            grads = backward(params, cache, Y_train[idx], model_cfg, class_weights=cw)
            opt.step(params, grads)
            for name, p in params.items():
                if not np.isfinite(p).all():
                    raise TrainingError(f"parameter {name} became non-finite at epoch {epoch}, batch starting {s}")
            loss_sum += batch_loss * len(idx)
            correct += float(np.sum(argmax_high(probs) == y_train[idx]))
        val_loss, val_acc = evaluate(params, X_val, y_val, model_cfg, cw)
        rec = EpochRecord(epoch, loss_sum / n, correct / n, val_loss, val_acc)
        history.records.append(rec)
        log.info(
            "epoch %d: loss %.4f acc %.4f | val loss %.4f acc %.4f (%.1fs)",
            epoch, rec.train_loss, rec.train_acc, val_loss, val_acc, time.perf_counter() - started,
        )
        if val_acc > best_acc:
            best_acc, best_params, stale = val_acc, {k: v.copy() for k, v in params.items()}, 0
            history.best_epoch = epoch
        else:
            stale += 1
            if train_cfg.patience is not None and stale >= train_cfg.patience:
                break

    bundle = ModelBundle(
        model_cfg,
        best_params,
        metadata={"best_epoch": history.best_epoch, "best_val_acc": best_acc, "training": train_cfg.to_dict()},
    )
    return bundle, history


def train(windows, split, model_cfg: ModelConfig, train_cfg: TrainingConfig, init_params: Params | None = None):
    """Train on the subjects of ``split.train_subjects`` and checkpoint on
    ``split.val_subjects``."""
    if split.train_subjects & split.val_subjects:
        raise ValidationError("train and validation subjects overlap")
    tr = windows.for_subjects(split.train_subjects)
    va = windows.for_subjects(split.val_subjects)
    if len(tr) == 0 or len(va) == 0:
        raise ValidationError("empty training or validation split")
    bundle, history = fit(tr.X, tr.labels, va.X, va.labels, model_cfg, train_cfg, init_params)
    bundle.metadata["train_subjects"] = sorted(split.train_subjects)
    bundle.metadata["val_subjects"] = sorted(split.val_subjects)
    return bundle, history
