"""Stateful gateway: buffers telemetry up to a session threshold, forwards the
full session to the inference engine exactly once, and reports status.

Session states move Filling -> Forwarding -> Complete. While a session is
Forwarding or Complete, new readings collect in a pre-buffer for the next
session; once that pre-buffer holds a full session (and the current one is
Complete) the gateway rolls over and dispatches again. ``single_session``
acknowledges and drops post-threshold readings instead.
"""

from __future__ import annotations

import collections
import logging
import math
import threading
import time
import uuid
from dataclasses import dataclass, field

from .errors import ValidationError
from .httpjson import HTTPError, JSONServer, request_json
from .pipeline import FEATURES, WINDOW

log = logging.getLogger(__name__)

FILLING, FORWARDING, COMPLETE = "Filling", "Forwarding", "Complete"
HISTORY_SIZE = 16


class DispatchError(RuntimeError):
    pass


def validate_sample(body) -> dict:
    if not isinstance(body, dict):
        raise ValidationError("sample must be a JSON object")
    sample = {}
    for name in FEATURES:
        value = body.get(name)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ValidationError(f"field {name!r} missing or not a finite number")
        sample[name] = float(value)
    for extra in ("subject_id", "timestamp_s"):
        if extra in body:
            sample[extra] = body[extra]
    return sample


def http_dispatcher(inference_url: str, timeout: float = 30.0):
    url = inference_url.rstrip("/") + "/predict"

    def dispatch(samples: list[dict]) -> dict:
        try:
            status, body = request_json("POST", url, {"samples": samples}, timeout=timeout)
        except OSError as exc:
            raise DispatchError(f"inference engine unreachable at {url}: {exc}") from exc
        if status != 200:
            raise DispatchError(f"inference engine answered {status}: {body.get('error', body)}")
        return body

    return dispatch


@dataclass
class Session:
    session_id: str
    samples: list = field(default_factory=list)
    state: str = FILLING
    verdict: dict | None = None
    error: str | None = None
    dispatches: int = 0
    threshold_reached_at: float | None = None
    latency_s: float | None = None

    def summary(self) -> dict:
        return {
            "session_id": self.session_id,
            "state": self.state,
            "buffered": len(self.samples),
            "verdict": self.verdict,
            "error": self.error,
            "latency_s": self.latency_s,
        }


class Gateway:
    def __init__(
        self,
        inference_url: str = "http://localhost:5000",
        threshold: int = 180,
        single_session: bool = False,
        dispatcher=None,
        retry_attempts: int = 3,
        retry_delay_s: float = 1.0,
    ):
        if threshold < WINDOW:
            raise ValidationError(f"session threshold must be >= {WINDOW} (one window), got {threshold}")
        self.threshold = int(threshold)
        self.single_session = single_session
        self.dispatch = dispatcher or http_dispatcher(inference_url)
        self.retry_attempts = retry_attempts
        self.retry_delay_s = retry_delay_s
        self._cond = threading.Condition()
        self._session = Session(self._new_id())
        self._pending: list = []
        self._ignored = 0
        self.history: collections.deque = collections.deque(maxlen=HISTORY_SIZE)
        self.dispatch_log: list[str] = []
        self._threads: list[threading.Thread] = []

    @staticmethod
    def _new_id() -> str:
        return uuid.uuid4().hex[:12]

    def ingest(self, body) -> dict:
        sample = validate_sample(body)
        with self._cond:
            s = self._session
            if s.state == FILLING:
                s.samples.append(sample)
                if len(s.samples) == self.threshold:
                    self._start_dispatch(s)
            elif self.single_session:
                self._ignored += 1
            else:
                self._pending.append(sample)
                self._maybe_roll_over()
            return self._ack()

    def _ack(self) -> dict:
        s = self._session
        return {
            "session_id": s.session_id,
            "buffered": len(s.samples),
            "threshold": self.threshold,
            "state": s.state,
            "pending": len(self._pending),
        }

    def _start_dispatch(self, s: Session) -> None:
        # caller holds the lock; this is the only place a dispatch starts
        s.state = FORWARDING
        s.dispatches += 1
        s.threshold_reached_at = time.perf_counter()
        self.dispatch_log.append(s.session_id)
        t = threading.Thread(target=self._run_dispatch, args=(s, list(s.samples)), daemon=True)
        self._threads.append(t)
        t.start()

    def _run_dispatch(self, s: Session, samples: list) -> None:
        payload = [{f: x[f] for f in FEATURES} for x in samples]
        verdict, error = None, None
        for attempt in range(1, self.retry_attempts + 1):
            try:
                verdict = self.dispatch(payload)
                break
            except Exception as exc:
                error = str(exc)
                log.warning("session %s: dispatch attempt %d failed: %s", s.session_id, attempt, exc)
                if attempt < self.retry_attempts:
                    time.sleep(self.retry_delay_s)
        with self._cond:
            s.verdict = verdict
            s.error = None if verdict is not None else error
            s.latency_s = time.perf_counter() - s.threshold_reached_at
            s.state = COMPLETE
            self._maybe_roll_over()
            self._cond.notify_all()

    def _maybe_roll_over(self) -> None:
        if self._session.state == COMPLETE and len(self._pending) >= self.threshold:
            self.history.append(self._session.summary())
            nxt = Session(self._new_id(), self._pending[: self.threshold])
            self._pending = self._pending[self.threshold :]
            self._session = nxt
            self._start_dispatch(nxt)

    def status(self) -> dict:
        with self._cond:
            out = self._session.summary()
            out.update(threshold=self.threshold, pending=len(self._pending), ignored=self._ignored, history=len(self.history))
            if out["verdict"] is None:
                del out["verdict"]
            if self.history:
                out["last_completed"] = self.history[-1]
            return out

    def reset(self) -> dict:
        """Start a fresh session, waiting for any in-flight dispatch first."""
        with self._cond:
            while self._session.state == FORWARDING:
                self._cond.wait()
            if self._session.samples:
                self.history.append(self._session.summary())
            self._session = Session(self._new_id())
            self._pending = []
            self._ignored = 0
            return {"session_id": self._session.session_id, "state": FILLING, "buffered": 0}

    def wait_for(self, state: str = COMPLETE, timeout: float | None = None) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: self._session.state == state, timeout)

    def join(self, timeout: float = 10.0) -> None:
        for t in list(self._threads):
            t.join(timeout)

    # HTTP routes
    def _ingest(self, body):
        try:
            return 202, self.ingest(body)
        except ValidationError as exc:
            raise HTTPError(400, str(exc)) from exc

    def _status(self, _body):
        return 200, self.status()

    def _reset(self, _body):
        return 200, self.reset()

    def server(self, host: str = "127.0.0.1", port: int = 8080) -> JSONServer:
        return JSONServer(
            {("POST", "/ingest"): self._ingest, ("GET", "/status"): self._status, ("POST", "/reset"): self._reset},
            host,
            port,
        )
