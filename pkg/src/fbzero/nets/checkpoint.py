"""Binary checkpoint format.

Layout::

    FBZ 1\\n
    {"schema": 1, "config_hash": "...", "step": 0, "extra": {...},
     "tensors": [{"name": "F/emb0/w", "shape": [..], "offset": 0, "nbytes": ..}, ...],
     "payload_bytes": N, "crc32": C}\\n
    <N bytes: little-endian float32 tensors, contiguous, in header order>

Offsets are relative to the first payload byte. Writes go to a temporary file
that is renamed into place, so readers never see a half-written checkpoint.
"""
from __future__ import annotations

import json
import os
import zlib

import numpy as np

MAGIC = b"FBZ"
SCHEMA_VERSION = 1
_DT = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class IntegrityError(CheckpointError):
    pass


class ConfigHashMismatch(CheckpointError):
    def __init__(self, found, expected):
        super().__init__(f"config hash mismatch: checkpoint {found}, run {expected}")
        self.found = found
        self.expected = expected


class ShapeMismatch(CheckpointError):
    def __init__(self, name, found, expected):
        super().__init__(f"tensor {name!r}: checkpoint shape {found}, expected {expected}")
        self.name = name


def save(path, arrays: dict, config_hash: str, step: int = 0, extra=None):
    entries, chunks, offset = [], [], 0
    for name in arrays:
        buf = np.ascontiguousarray(arrays[name], dtype=_DT).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arrays[name])),
                        "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    header = {
        "schema": SCHEMA_VERSION,
        "config_hash": config_hash,
        "step": int(step),
        "extra": extra or {},
        "tensors": entries,
        "payload_bytes": len(payload),
        "crc32": zlib.crc32(payload),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + b" %d\n" % SCHEMA_VERSION)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def read_header(fh):
    first = fh.readline()
    parts = first.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic line)")
    if int(parts[1]) != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {parts[1].decode()}")
    line = fh.readline()
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"corrupt header: {exc}") from None


def load(path, expected_hash=None, expected_shapes=None, check_hash=True):
    """Return ``(arrays, header)``; nothing is returned unless every check passes."""
    with open(path, "rb") as fh:
        header = read_header(fh)
        payload = fh.read()
    if len(payload) != header["payload_bytes"]:
        raise IntegrityError(
            f"payload is {len(payload)} bytes, header declares {header['payload_bytes']}"
        )
    if zlib.crc32(payload) != header["crc32"]:
        raise IntegrityError("payload checksum mismatch")
    if check_hash and expected_hash is not None and header["config_hash"] != expected_hash:
        raise ConfigHashMismatch(header["config_hash"], expected_hash)
    arrays, end = {}, 0
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        lo, n = t["offset"], t["nbytes"]
        if lo < end or lo + n > len(payload) or n != 4 * int(np.prod(shape, dtype=np.int64)):
            raise IntegrityError(f"tensor {t['name']!r}: bad offset or size")
        end = lo + n
        arrays[t["name"]] = np.frombuffer(payload, dtype=_DT, count=n // 4, offset=lo).reshape(shape).astype(np.float32)
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in arrays:
                raise CheckpointError(f"tensor {name!r} missing from checkpoint")
            if tuple(arrays[name].shape) != tuple(shape):
                raise ShapeMismatch(name, tuple(arrays[name].shape), tuple(shape))
    return arrays, header
