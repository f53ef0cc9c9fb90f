"""Versioned binary container for named float32 tensors.

Layout (little-endian):
  magic (4 bytes) | u32 version | 32-byte digest | u32 meta_len | meta JSON
  | u32 n_records | records

Each record: u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank]
| rank-major float32 payload. Records are written in sorted name order so
that save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError


def digest_of(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_container(
    path,
    magic: bytes,
    version: int,
    digest: bytes,
    meta: dict,
    tensors: dict[str, np.ndarray],
) -> None:
    """Atomically write the container (temp file + rename)."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    meta_blob = canonical_json(meta).encode("utf-8")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(magic)
            fh.write(struct.pack("<I", version))
            fh.write(digest)
            fh.write(struct.pack("<I", len(meta_blob)))
            fh.write(meta_blob)
            fh.write(struct.pack("<I", len(tensors)))
            for name in sorted(tensors):
                # asarray keeps rank-0 tensors rank-0; tobytes() emits C order.
                arr = np.asarray(tensors[name], dtype="<f4")
                name_b = name.encode("utf-8")
                fh.write(struct.pack("<I", len(name_b)))
                fh.write(name_b)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated container")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_container(path, magic: bytes) -> tuple[int, bytes, dict, dict[str, np.ndarray]]:
    """Return (version, digest, meta, tensors). Raises FormatError on corruption."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    version = r.u32()
    digest = r.take(32)
    meta_len = r.u32()
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad metadata block ({exc})") from exc
    n_records = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        if rank > 8:
            raise FormatError(f"{path}: implausible tensor rank {rank} for {name!r}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * count)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} trailing bytes after last record")
    return version, digest, meta, tensors
