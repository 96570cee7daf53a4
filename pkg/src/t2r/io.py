"""Checkpoint and corpus persistence.

Checkpoint layout (all integers little-endian):

    magic   4 bytes  "T2R1"
    version u32      currently 1
    config  u64 byte length, then UTF-8 key=value lines
            (model config plus "meta.*" training metadata)
    tensors u64 count, then per tensor:
            u64 name length + UTF-8 name
            u64 rank, rank * u64 dims
            raw float64 data, row-major

Round trips are bit-exact. Loading validates the magic and version before any
tensor read, then checks every tensor name and shape against the config and
fails closed on truncation, duplicates, unknown names, or non-finite values.
Writes go to a temp file and rename on success, so no partial checkpoints.
"""

from __future__ import annotations

import csv
import os
import tempfile

import numpy as np

from .errors import CorruptionError, InputError, ValidationError
from .model import Checkpoint, ModelConfig, expected_param_shapes

MAGIC = b"T2R1"
VERSION = 1


def _u32(x: int) -> bytes:
    return np.uint32(x).astype("<u4").tobytes()


def _u64(x: int) -> bytes:
    return np.uint64(x).astype("<u8").tobytes()


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Serialize to ``path`` atomically (temp file + rename)."""
    lines = ckpt.config.to_lines()
    for key in sorted(ckpt.meta):
        lines.append(f"meta.{key}={ckpt.meta[key]}")
    config_bytes = ("\n".join(lines) + "\n").encode("utf-8")
    parts = [MAGIC, _u32(VERSION), _u64(len(config_bytes)), config_bytes, _u64(len(ckpt.params))]
    for name, arr in ckpt.params.items():
        name_b = name.encode("utf-8")
        parts.append(_u64(len(name_b)))
        parts.append(name_b)
        parts.append(_u64(arr.ndim))
        for dim in arr.shape:
            parts.append(_u64(dim))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(parts)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".t2r-tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise CorruptionError(self.offset, f"truncated while reading {what}")
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out

    def u32(self, what: str) -> int:
        return int(np.frombuffer(self.take(4, what), dtype="<u4")[0])

    def u64(self, what: str) -> int:
        return int(np.frombuffer(self.take(8, what), dtype="<u8")[0])


def load_checkpoint(path: str) -> Checkpoint:
    """Load and validate a checkpoint; never returns a partial model."""
    if not os.path.exists(path):
        raise InputError(f"checkpoint file not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise ValidationError(f"bad magic {magic!r}; not a checkpoint file")
    version = r.u32("version")
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    config_len = r.u64("config length")
    config_text = r.take(config_len, "config block").decode("utf-8")
    meta: dict[str, str] = {}
    cfg_lines: list[str] = []
    for line in config_text.splitlines():
        if line.startswith("meta."):
            key, _, val = line.partition("=")
            meta[key[len("meta.") :]] = val
        elif line.strip():
            cfg_lines.append(line)
    config = ModelConfig.from_lines(cfg_lines)
    expected = expected_param_shapes(config)

    count = r.u64("tensor count")
    if count != len(expected):
        raise ValidationError(f"tensor directory lists {count} tensors, config expects {len(expected)}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u64("tensor name length")
        if name_len > 4096:
            raise CorruptionError(r.offset - 8, f"implausible tensor name length {name_len}")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptionError(r.offset, "tensor name is not valid UTF-8") from e
        if name in params:
            raise ValidationError(f"duplicate tensor '{name}'")
        if name not in expected:
            raise ValidationError(f"unknown tensor '{name}' for this config")
        rank = r.u64(f"rank of '{name}'")
        if rank > 8:
            raise CorruptionError(r.offset - 8, f"implausible rank {rank} for '{name}'")
        dims = tuple(r.u64(f"dim of '{name}'") for _ in range(rank))
        if dims != expected[name]:
            raise ValidationError(f"tensor '{name}' has shape {dims}, config expects {expected[name]}")
        n_elem = 1
        for dim in dims:
            n_elem *= dim
        raw = r.take(8 * n_elem, f"data of '{name}'")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"tensor '{name}' contains non-finite values")
        params[name] = arr
    if r.offset != len(blob):
        raise CorruptionError(r.offset, f"{len(blob) - r.offset} trailing bytes after tensor directory")
    missing = expected.keys() - params.keys()
    if missing:
        raise ValidationError(f"missing tensors: {sorted(missing)}")
    return Checkpoint(config, params, meta)


# --- corpus ------------------------------------------------------------------------


def load_corpus(path: str) -> np.ndarray:
    """Byte-level tokenization: each byte of the file is one id in 0..255."""
    if not os.path.exists(path):
        raise InputError(f"corpus file not found: {path}")
    with open(path, "rb") as f:
        data = f.read()
    if not data:
        raise InputError(f"corpus file is empty: {path}")
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


def detokenize(ids) -> bytes:
    arr = np.asarray(ids)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InputError("byte ids must be in 0..255")
    return arr.astype(np.uint8).tobytes()


def write_csv(path: str, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=header)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
