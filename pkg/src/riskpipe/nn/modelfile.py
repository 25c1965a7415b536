"""Versioned binary container for models and labelled window datasets.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"BENV"
    4       1     format version (1)
    5       4     u32 manifest length M
    9       M     UTF-8 JSON manifest
    9+M     P     tensor payload, float32 little-endian, C order
    9+M+P   4     u32 CRC32 of bytes [0, 9+M+P)

The manifest carries a ``tensors`` registry of ``{name, shape, offset}``
entries, offsets relative to the payload start, in payload order.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .model import PARAM_NAMES, ModelConfig, check_params
from .train import ModelBundle

MAGIC = b"BENV"
VERSION = 1
_HEADER = struct.Struct("<4sBI")
_CRC = struct.Struct("<I")
_DTYPE = np.dtype("<f4")


class ModelFileError(ValueError):
    pass


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedDataError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


def dump_container(manifest: dict, tensors: dict[str, np.ndarray]) -> bytes:
    registry = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        registry.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    manifest = {**manifest, "tensors": registry}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)
    return body + _CRC.pack(zlib.crc32(body))


def parse_container(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("bad magic: not a model/dataset container")
    if len(data) < _HEADER.size:
        raise TruncatedDataError("truncated header")
    _, version, mlen = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, reader supports {VERSION}")
    start = _HEADER.size + mlen
    if len(data) < start:
        raise TruncatedDataError("truncated manifest")
    crc_ok = len(data) >= start + _CRC.size and _CRC.unpack_from(data, len(data) - _CRC.size)[0] == zlib.crc32(data[: -_CRC.size])
    try:
        manifest = json.loads(data[_HEADER.size : start].decode("utf-8"))
        registry = manifest["tensors"]
        sizes = [int(np.prod(t["shape"], dtype=np.int64)) * _DTYPE.itemsize for t in registry]
    except (ValueError, KeyError, TypeError) as exc:
        if not crc_ok:
            raise ChecksumError("checksum failure (manifest unreadable)") from exc
        raise ModelFileError(f"malformed manifest: {exc}") from exc
    payload_len = sum(sizes)
    expected = start + payload_len + _CRC.size
    if len(data) < expected:
        raise TruncatedDataError(f"truncated tensor data: need {expected} bytes, file has {len(data)}")
    if len(data) > expected:
        raise ModelFileError(f"{len(data) - expected} unexpected trailing bytes")
    if not crc_ok:
        raise ChecksumError("checksum failure: CRC32 does not match contents")
    tensors = {}
    for entry, size in zip(registry, sizes):
        lo = start + int(entry["offset"])
        arr = np.frombuffer(data, dtype=_DTYPE, count=size // _DTYPE.itemsize, offset=lo)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return manifest, tensors


def fingerprint_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def model_bytes(bundle: ModelBundle) -> bytes:
    check_params(bundle.params, bundle.config)
    manifest = {
        "kind": "model",
        "config": bundle.config.to_dict(),
        "labels": list(bundle.labels),
        "metadata": bundle.metadata,
    }
    return dump_container(manifest, {name: bundle.params[name] for name in PARAM_NAMES})


def save_model(bundle: ModelBundle, path) -> str:
    """Write ``bundle``; returns the file fingerprint (SHA-256 hex)."""
    data = model_bytes(bundle)
    Path(path).write_bytes(data)
    bundle.fingerprint = fingerprint_bytes(data)
    return bundle.fingerprint


def load_model(path) -> ModelBundle:
    data = Path(path).read_bytes()
    manifest, tensors = parse_container(data)
    if manifest.get("kind") != "model":
        raise ModelFileError(f"container holds a {manifest.get('kind')!r}, not a model")
    try:
        config = ModelConfig.from_dict(manifest["config"])
        bundle = ModelBundle(config, tensors, tuple(manifest["labels"]), manifest.get("metadata", {}))
        check_params(bundle.params, config)
    except (KeyError, ValidationError) as exc:
        raise ModelFileError(f"inconsistent model manifest: {exc}") from exc
    bundle.fingerprint = fingerprint_bytes(data)
    return bundle
