"""Prediction sources and the prediction table.

A prediction is keyed by ``(model_id, shot_id, frame_offset, family,
severity, seed)``. The clean anchor is ``(offset 0, "identity", 0)``; a
natural neighbour k is ``(offset k, "natural", k)``; a synthetic distortion
of the anchor is ``(offset 0, family, severity, seed)``.
"""

from __future__ import annotations

import base64
import csv
import json
import math
import os
import select
import shlex
import socket
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from natrobust.errors import (
    DuplicateKey,
    LabelOutOfRange,
    ParseError,
    ProtocolError,
    ServiceConnectionError,
    ServiceTimeout,
    ShapeMismatch,
)
from natrobust.image import Image, encode_png
from natrobust.trainer import FEATURE_DIM, MLPModel, featurize, forward

PREDICTION_COLUMNS = ("model_id", "shot_id", "frame_offset", "transform_family",
                      "severity", "seed", "predicted_label", "logits")
IDENTITY = "identity"
NATURAL = "natural"


class TransformRef(NamedTuple):
    family: str
    severity: int
    seed: int | None = None

    @property
    def frame_offset(self) -> int:
        return self.severity if self.family == NATURAL else 0

    def label(self) -> str:
        if self.family == NATURAL:
            return f"natural{self.severity:+d}"
        s = f"{self.family}@{self.severity}"
        return s if self.seed is None else f"{s}#{self.seed}"


CLEAN = TransformRef(IDENTITY, 0)


def natural(k: int) -> TransformRef:
    return TransformRef(NATURAL, int(k))


class PredictionKey(NamedTuple):
    model_id: str
    shot_id: str
    frame_offset: int
    family: str
    severity: int
    seed: int | None


@dataclass(frozen=True)
class PredictionRecord:
    model_id: str
    shot_id: str
    transform: TransformRef
    predicted_label: int
    logits: tuple | None = None

    @property
    def frame_offset(self) -> int:
        return self.transform.frame_offset

    @property
    def key(self) -> PredictionKey:
        t = self.transform
        return PredictionKey(self.model_id, self.shot_id, t.frame_offset, t.family, t.severity, t.seed)

    @classmethod
    def from_logits(cls, model_id, shot_id, transform, logits) -> "PredictionRecord":
        logits = tuple(float(v) for v in logits)
        return cls(model_id, shot_id, transform, int(np.argmax(logits)), logits)


class PredictionTable:
    """Immutable collection of records with unique keys."""

    def __init__(self, records=(), num_classes: dict | None = None):
        self._records: dict = {}
        self._k: dict = dict(num_classes or {})
        for rec in records:
            self._add(rec)

    def _add(self, rec: PredictionRecord):
        if rec.key in self._records:
            raise DuplicateKey(f"duplicate prediction {tuple(rec.key)}")
        if rec.logits is not None:
            k = len(rec.logits)
            if self._k.setdefault(rec.model_id, k) != k:
                raise ParseError(f"model {rec.model_id}: logit length {k} != {self._k[rec.model_id]}")
        k = self._k.get(rec.model_id)
        if rec.predicted_label < 0 or (k is not None and rec.predicted_label >= k):
            raise LabelOutOfRange(f"{tuple(rec.key)}: label {rec.predicted_label} outside [0, {k})")
        if rec.logits is not None and rec.predicted_label != int(np.argmax(rec.logits)):
            raise ParseError(f"{tuple(rec.key)}: label {rec.predicted_label} is not argmax of logits")
        self._records[rec.key] = rec

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records.values())

    def __contains__(self, key):
        return key in self._records

    def get(self, model_id, shot_id, transform: TransformRef):
        t = TransformRef(*transform)
        return self._records.get(PredictionKey(model_id, shot_id, t.frame_offset, t.family, t.severity, t.seed))

    def label(self, model_id, shot_id, transform: TransformRef):
        rec = self.get(model_id, shot_id, transform)
        return None if rec is None else rec.predicted_label

    def model_ids(self) -> list[str]:
        return sorted({k.model_id for k in self._records})

    def transforms(self, model_id: str | None = None) -> list[TransformRef]:
        refs = {TransformRef(k.family, k.severity, k.seed)
                for k in self._records if model_id is None or k.model_id == model_id}
        return sorted(refs, key=_transform_sort_key)

    def num_classes(self, model_id: str):
        return self._k.get(model_id)

    def merged(self, other: "PredictionTable") -> "PredictionTable":
        k = dict(self._k)
        k.update(other._k)
        return PredictionTable(list(self) + list(other), k)

    def sorted_records(self) -> list[PredictionRecord]:
        return [self._records[k] for k in sorted(self._records, key=_key_sort)]


def _seed_sort(seed):
    return -1 if seed is None else seed


def _transform_sort_key(t: TransformRef):
    return (t.family != IDENTITY, t.family != NATURAL, t.family, t.severity, _seed_sort(t.seed))


def _key_sort(k: PredictionKey):
    return (k.model_id, k.shot_id, _transform_sort_key(TransformRef(k.family, k.severity, k.seed)))


def _parse_int(value, what, lineno):
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"line {lineno}: {what} {value!r} is not an integer") from None


def load_predictions(path, num_classes: int | dict | None = None) -> PredictionTable:
    """Read a prediction CSV. ``num_classes`` (int or per-model dict) bounds labels
    for models whose rows carry no logits."""
    path = Path(path)
    if isinstance(num_classes, int):
        k_arg = num_classes
        per_model = {}
    else:
        k_arg = None
        per_model = dict(num_classes or {})
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PREDICTION_COLUMNS:
            raise ParseError(f"{path}: header must be {','.join(PREDICTION_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PREDICTION_COLUMNS):
                raise ParseError(f"line {lineno}: expected {len(PREDICTION_COLUMNS)} fields")
            model_id, shot_id, offset, family, sev, seed, label, logits = (c.strip() for c in row)
            if not model_id or not shot_id or not family:
                raise ParseError(f"line {lineno}: empty model_id/shot_id/transform_family")
            offset = _parse_int(offset, "frame_offset", lineno)
            sev = _parse_int(sev, "severity", lineno)
            seed = _parse_int(seed, "seed", lineno) if seed else None
            label = _parse_int(label, "predicted_label", lineno)
            if family == NATURAL:
                if offset != sev or sev == 0 or abs(sev) > 5:
                    raise ParseError(f"line {lineno}: natural rows need frame_offset == severity in -5..5 \\ {{0}}")
            elif offset != 0:
                raise ParseError(f"line {lineno}: synthetic transforms apply to the anchor (frame_offset 0)")
            elif not 0 <= sev <= 5:
                raise ParseError(f"line {lineno}: severity {sev} outside 0..5")
            vec = None
            if logits:
                try:
                    vec = tuple(float(v) for v in logits.split(";"))
                except ValueError:
                    raise ParseError(f"line {lineno}: malformed logits") from None
                if not all(math.isfinite(v) for v in vec):
                    raise ParseError(f"line {lineno}: non-finite logits")
            if k_arg is not None:
                per_model.setdefault(model_id, k_arg)
            records.append(PredictionRecord(model_id, shot_id, TransformRef(family, sev, seed), label, vec))
    return PredictionTable(records, per_model)


def save_predictions(table: PredictionTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for r in table.sorted_records():
            t = r.transform
            w.writerow([r.model_id, r.shot_id, t.frame_offset, t.family, t.severity,
                        "" if t.seed is None else t.seed, r.predicted_label,
                        "" if r.logits is None else ";".join(repr(float(v)) for v in r.logits)])


# --- builtin model -------------------------------------------------------------

def predict_builtin(model: MLPModel, img: Image) -> np.ndarray:
    if model.sizes[0] != FEATURE_DIM:
        raise ShapeMismatch(f"builtin featurization yields {FEATURE_DIM} features; model expects {model.sizes[0]}")
    return forward(model, featurize(img))


# --- model service client ----------------------------------------------------

class _LineChannel:
    """Newline-delimited byte stream over a socket or a subprocess's stdio."""

    def __init__(self, endpoint: str, timeout: float):
        self.timeout = timeout
        self.sock = None
        self.proc = None
        self._buf = b""
        if endpoint.startswith("tcp://"):
            host, _, port = endpoint[len("tcp://"):].rpartition(":")
            try:
                self.sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
            except OSError as exc:
                raise ServiceConnectionError(f"cannot connect to {endpoint}: {exc}") from exc
        elif endpoint.startswith("stdio:"):
            try:
                self.proc = subprocess.Popen(
                    shlex.split(endpoint[len("stdio:"):]), stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                )
            except OSError as exc:
                raise ServiceConnectionError(f"cannot start {endpoint}: {exc}") from exc
        else:
            raise ServiceConnectionError(f"endpoint must be tcp://host:port or stdio:<command>, got {endpoint!r}")

    def send(self, obj) -> None:
        data = (json.dumps(obj, separators=(",", ":")) + "\n").encode()
        try:
            if self.sock is not None:
                self.sock.sendall(data)
            else:
                self.proc.stdin.write(data)
                self.proc.stdin.flush()
        except OSError as exc:
            raise ServiceConnectionError(f"send failed: {exc}") from exc

    def _read_chunk(self, deadline) -> bytes:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ServiceTimeout("no response from model service")
        if self.sock is not None:
            self.sock.settimeout(remaining)
            try:
                return self.sock.recv(65536)
            except socket.timeout:
                raise ServiceTimeout("no response from model service") from None
            except OSError as exc:
                raise ServiceConnectionError(f"receive failed: {exc}") from exc
        fd = self.proc.stdout.fileno()
        ready, _, _ = select.select([fd], [], [], remaining)
        if not ready:
            raise ServiceTimeout("no response from model service")
        return os.read(fd, 65536)

    def recv(self):
        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buf:
            chunk = self._read_chunk(deadline)
            if not chunk:
                raise ServiceConnectionError("model service closed the connection")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line: {line[:80]!r}") from exc

    def close(self):
        if self.sock is not None:
            self.sock.close()
        if self.proc is not None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


def query_service(endpoint: str, frames, num_classes: int | None = None, *,
                  timeout: float = 10.0, retries: int = 2, max_in_flight: int = 8,
                  backoff: float = 0.05) -> list[np.ndarray]:
    """Send frames to a model service; return one logit vector per frame, in order.

    Requests are ``{"id", "png_b64"}`` lines; responses ``{"id", "logits"}``
    may arrive in any order. Transient connection failures and timeouts
    reconnect and resend the unanswered requests, up to ``retries`` times.
    """
    payloads = [base64.b64encode(encode_png(f) if isinstance(f, Image) else bytes(f)).decode("ascii")
                for f in frames]
    results: list = [None] * len(payloads)
    expected_k = num_classes
    attempt = 0
    while True:
        pending = [i for i, r in enumerate(results) if r is None]
        if not pending:
            return results
        try:
            chan = _LineChannel(endpoint, timeout)
            try:
                expected_k = _exchange(chan, payloads, pending, results, expected_k, max_in_flight)
            finally:
                chan.close()
        except (ServiceConnectionError, ServiceTimeout):
            attempt += 1
            if attempt > retries:
                raise
            time.sleep(backoff * attempt)


def _exchange(chan, payloads, pending, results, expected_k, max_in_flight):
    queue = list(pending)
    in_flight = set()
    while queue or in_flight:
        while queue and len(in_flight) < max(1, max_in_flight):
            i = queue.pop(0)
            chan.send({"id": i, "png_b64": payloads[i]})
            in_flight.add(i)
        msg = chan.recv()
        if not isinstance(msg, dict) or "id" not in msg or "logits" not in msg:
            raise ProtocolError(f"response lacks id/logits: {str(msg)[:80]}")
        rid = msg["id"]
        if rid not in in_flight:
            raise ProtocolError(f"response for unknown request id {rid!r}")
        logits = msg["logits"]
        if not isinstance(logits, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                   for v in logits):
            raise ProtocolError(f"request {rid}: logits must be a list of numbers")
        if expected_k is None:
            expected_k = len(logits)
        if len(logits) != expected_k or expected_k == 0:
            raise ProtocolError(f"request {rid}: expected {expected_k} logits, got {len(logits)}")
        results[rid] = np.asarray(logits, dtype=np.float64)
        in_flight.discard(rid)
    return expected_k
