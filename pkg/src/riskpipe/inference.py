"""Inference engine: session standardization, windowing, classification and
verdict aggregation, plus the warm-started HTTP service around it."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .httpjson import HTTPError, JSONServer
from .nn.model import predict
from .nn.modelfile import load_model
from .nn.train import ModelBundle
from .pipeline import FEATURES, WINDOW, segment, zscore
from .risk import LABELS, RiskLabel

log = logging.getLogger(__name__)

AGGREGATIONS = ("majority", "max_risk")


@dataclass(frozen=True)
class SessionVerdict:
    label: RiskLabel
    confidence: float
    window_count: int
    per_class_fraction: dict
    model_fingerprint: str = ""
    aggregation: str = "majority"

    def to_dict(self) -> dict:
        return {
            "label": self.label.display,
            "confidence": self.confidence,
            "window_count": self.window_count,
            "per_class_fraction": dict(self.per_class_fraction),
            "model_fingerprint": self.model_fingerprint,
            "aggregation": self.aggregation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionVerdict":
        return cls(
            RiskLabel.parse(data["label"]),
            float(data["confidence"]),
            int(data["window_count"]),
            dict(data["per_class_fraction"]),
            data.get("model_fingerprint", ""),
            data.get("aggregation", "majority"),
        )


def aggregate_verdict(labels, probabilities, aggregation: str = "majority", fingerprint: str = "") -> SessionVerdict:
    """Reduce per-window predictions to one verdict.

    ``majority``: most common window label, ties toward higher risk.
    ``max_risk``: highest label any window received.
    Confidence is the mean winning-class probability over the windows that
    voted for the winner.
    """
    labels = np.asarray(labels, dtype=np.int64)
    probs = np.asarray(probabilities, dtype=np.float64)
    if len(labels) == 0:
        raise ValidationError("no window predictions to aggregate")
    if aggregation not in AGGREGATIONS:
        raise ValidationError(f"unknown aggregation {aggregation!r}; use one of {AGGREGATIONS}")
    votes = np.bincount(labels, minlength=len(LABELS))
    if aggregation == "majority":
        winner = int(np.flatnonzero(votes == votes.max()).max())
    else:
        winner = int(labels.max())
    voters = labels == winner
    confidence = float(probs[voters, winner].mean())
    n = len(labels)
    fractions = {label.display: int(votes[label]) / n for label in LABELS}
    return SessionVerdict(RiskLabel(winner), confidence, n, fractions, fingerprint, aggregation)


def session_windows(values: np.ndarray) -> np.ndarray:
    """Z-score a session over its own samples and cut stride-1 windows."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(FEATURES):
        raise ValidationError(f"expected (n, {len(FEATURES)}) samples")
    if len(values) < WINDOW:
        raise ValidationError(f"need at least {WINDOW} samples, got {len(values)}")
    bad = np.flatnonzero(~np.isfinite(values).all(axis=1))
    if len(bad):
        raise ValidationError(f"non-finite value in sample {int(bad[0])}", )
    z, _, _ = zscore(values)
    return segment(z).X


def assess_session(bundle: ModelBundle, values: np.ndarray, aggregation: str = "majority") -> SessionVerdict:
    windows = session_windows(values)
    labels, _, probs = predict(bundle.params, windows, bundle.config)
    return aggregate_verdict(labels, probs, aggregation, bundle.fingerprint)


def parse_samples(samples) -> np.ndarray:
    """JSON sample objects -> (n, 5) float array; errors name the index."""
    if not isinstance(samples, list):
        raise ValidationError("'samples' must be a list of objects")
    out = np.empty((len(samples), len(FEATURES)))
    for i, sample in enumerate(samples):
        if not isinstance(sample, dict):
            raise ValidationError(f"sample {i} is not an object")
        for j, name in enumerate(FEATURES):
            value = sample.get(name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"sample {i}: field {name!r} missing or not a number")
            if not math.isfinite(value):
                raise ValidationError(f"sample {i}: field {name!r} is not finite")
            out[i, j] = value
    return out


class InferenceService:
    """Holds one immutable model, loaded once, and answers predictions."""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle

    @classmethod
    def from_file(cls, path) -> "InferenceService":
        return cls(load_model(path))

    @property
    def fingerprint(self) -> str:
        return self.bundle.fingerprint

    def handle_predict(self, body) -> SessionVerdict:
        if not isinstance(body, dict) or "samples" not in body:
            raise ValidationError("body must be an object with a 'samples' list")
        aggregation = body.get("aggregation") or "majority"
        values = parse_samples(body["samples"])
        if len(values) < WINDOW:
            raise ValidationError(f"need at least {WINDOW} samples, got {len(values)}")
        return assess_session(self.bundle, values, aggregation)

    # HTTP routes
    def _predict(self, body):
        if body is None:
            raise HTTPError(400, "empty request body")
        try:
            verdict = self.handle_predict(body)
        except ValidationError as exc:
            raise HTTPError(422, str(exc)) from exc
        return 200, verdict.to_dict()

    def _health(self, _body):
        return 200, {"status": "ok", "model_loaded": self.bundle is not None, "model_fingerprint": self.fingerprint}

    def server(self, host: str = "127.0.0.1", port: int = 5000) -> JSONServer:
        return JSONServer({("POST", "/predict"): self._predict, ("GET", "/health"): self._health}, host, port)
