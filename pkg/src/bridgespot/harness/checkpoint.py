"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic     8 bytes  b"BRSPCKPT"
    version   u32
    meta      u32 length + UTF-8 JSON (kind, fingerprint, extra)
    count     u32
    per tensor:
      name    u16 length + UTF-8
      dtype   1 byte tag (b"d" = float64)
      frozen  u8
      ndim    u8, then ndim x u32 dims
      nbytes  u64, then raw little-endian data
    crc32     u32 over everything before it
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nn import ParameterStore

MAGIC = b"BRSPCKPT"
VERSION = 1
_DTYPES = {b"d": np.dtype("<f8")}


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    """Bad magic, truncation, or checksum failure."""


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    """Stored tensor table does not fit the receiving architecture."""


@dataclass
class Checkpoint:
    kind: str
    tensors: dict[str, np.ndarray]
    frozen: dict[str, bool] = field(default_factory=dict)
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_store(cls, kind: str, store: ParameterStore, fingerprint: str = "",
                   extra: dict | None = None) -> "Checkpoint":
        return cls(kind,
                   {n: e.tensor.data.copy() for n, e in store.entries.items()},
                   {n: e.frozen for n, e in store.entries.items()},
                   fingerprint, dict(extra or {}))

    def apply_to(self, store: ParameterStore, prefix: str = "") -> None:
        """Load tensors into ``store``; every name and shape must match."""
        names = {n for n in self.tensors if n.startswith(prefix)}
        missing = sorted(set(store.entries) - names)
        unexpected = sorted(names - set(store.entries))
        if missing or unexpected:
            raise ShapeMismatchError(
                f"{self.kind} checkpoint does not fit architecture: "
                f"missing={missing[:4]} unexpected={unexpected[:4]}")
        for n in names:
            target = store.entries[n].tensor
            if target.shape != self.tensors[n].shape:
                raise ShapeMismatchError(f"{n}: checkpoint {self.tensors[n].shape} "
                                         f"vs model {target.shape}")
        for n in names:
            store.entries[n].tensor.data = np.array(self.tensors[n], dtype=np.float64)


def encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps({"kind": ckpt.kind, "fingerprint": ckpt.fingerprint,
                       "extra": ckpt.extra}, sort_keys=True).encode()
    parts += [struct.pack("<I", len(meta)), meta, struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, b"d",
                  struct.pack("<BB", int(ckpt.frozen.get(name, False)), arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape),
                  struct.pack("<Q", arr.nbytes), arr.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("bad or missing checkpoint header")
    r = _Reader(buf)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CorruptCheckpointError("checksum mismatch (truncated or corrupted file)")
    r.buf = buf[:-4]
    (mlen,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(mlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError("unreadable metadata") from exc
    (count,) = r.unpack("<I")
    tensors, frozen = {}, {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        tag = r.take(1)
        if tag not in _DTYPES:
            raise CorruptCheckpointError(f"{name}: unknown dtype tag {tag!r}")
        fz, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        dt = _DTYPES[tag]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise CorruptCheckpointError(f"{name}: byte count does not match shape {shape}")
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(np.float64)
        frozen[name] = bool(fz)
    if r.pos != len(r.buf):
        raise CorruptCheckpointError("trailing bytes after tensor table")
    return Checkpoint(meta["kind"], tensors, frozen, meta.get("fingerprint", ""),
                      meta.get("extra", {}))


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return decode(Path(path).read_bytes())
