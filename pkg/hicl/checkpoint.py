"""Checkpoint archive.

Layout (all integers little-endian)::

    magic     8 bytes  b"HICLCKPT"
    version   uint32
    header    uint64 length + UTF-8 JSON (sorted keys)
    count     uint64
    records   count x (uint32 name length, name, uint32 ndim,
                       ndim x uint64 dims, '<f8' payload)

The JSON header carries the run configuration, so an archive rebuilds its
model without any other input.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from .exceptions import CheckpointError, DataError
from .model import HiclModel
from .models import RunConfig
from .router import Prototype
from .utils import rng_stream

logger = logging.getLogger(__name__)

MAGIC = b"HICLCKPT"
FORMAT_VERSION = 1
PROTOTYPE_PREFIX = "prototype."


def encode_archive(header: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialise a header and named float arrays; records keep insertion order"""
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(header_bytes)), header_bytes,
             struct.pack("<Q", len(arrays))]
    for name, value in arrays.items():
        value = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(value.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.raw):
            raise CheckpointError(f"truncated archive while reading {what} at byte {self.offset}")
        chunk = self.raw[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_archive(raw: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Inverse of :func:`encode_archive`.

    Raises:
        CheckpointError: On a bad magic, unknown version, truncation or trailing bytes
    """
    reader = _Reader(raw)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint archive (bad magic)")
    (version,) = reader.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    (header_len,) = reader.unpack("<Q", "header length")
    try:
        header = json.loads(reader.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    (count,) = reader.unpack("<Q", "record count")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I", "name length")
        name = reader.take(name_len, "record name").decode("utf-8")
        (ndim,) = reader.unpack("<I", f"{name} ndim")
        dims = reader.unpack(f"<{ndim}Q", f"{name} dims") if ndim else ()
        size = int(np.prod(dims)) if ndim else 1
        payload = reader.take(8 * size, f"{name} payload")
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if reader.offset != len(raw):
        raise CheckpointError(f"{len(raw) - reader.offset} trailing bytes after the last record")
    return header, arrays


def save_checkpoint(path: str, model: HiclModel, config: RunConfig, extra: Optional[Mapping[str, Any]] = None) -> None:
    """Write parameters, prototypes and task bookkeeping of ``model``"""
    header = {
        "config": config.model_dump(mode="json"),
        "tasks_seen": len(model.task_classes),
        "task_classes": {str(t): classes for t, classes in model.task_classes.items()},
        "prototype_counts": [p.update_count for p in model.prototypes],
        "extra": dict(extra or {}),
    }
    arrays: Dict[str, np.ndarray] = dict(model.state_dict())
    for prototype in model.prototypes:
        arrays[f"{PROTOTYPE_PREFIX}{prototype.expert_id}"] = prototype.vector
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_archive(header, arrays))
    logger.debug(f"Checkpoint written: {target.name} ({len(arrays)} records)")


def load_checkpoint(path: str) -> Tuple[HiclModel, RunConfig, Dict[str, Any]]:
    """Rebuild a model from an archive.

    Returns:
        Tuple of (model, run config, header)

    Raises:
        DataError: If the file cannot be read
        CheckpointError: If the archive is malformed or does not match its config
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    header, arrays = decode_archive(raw)
    try:
        config = RunConfig.model_validate(header["config"])
    except (KeyError, ValidationError) as exc:
        raise CheckpointError(f"checkpoint config record is invalid: {exc}") from None
    model = HiclModel(config.model, rng_stream(config.seed, "init"))
    params = {k: v for k, v in arrays.items() if not k.startswith(PROTOTYPE_PREFIX)}
    model.load_state_dict(params)
    counts = header.get("prototype_counts", [])
    if len(counts) != model.n_experts:
        raise CheckpointError(f"{len(counts)} prototype counts for {model.n_experts} experts")
    for expert_id, count in enumerate(counts):
        key = f"{PROTOTYPE_PREFIX}{expert_id}"
        if key not in arrays:
            raise CheckpointError(f"missing record {key}")
        model.prototypes[expert_id] = Prototype(expert_id=expert_id, vector=arrays[key].copy(),
                                                update_count=int(count), ema_rate=config.model.gating.ema_rate)
    for task_id in sorted(int(t) for t in header.get("task_classes", {})):
        model.assign_task(task_id, header["task_classes"][str(task_id)])
    return model, config, header
