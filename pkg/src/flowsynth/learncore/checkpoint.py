"""Binary checkpoint container for named float64 tensors.

Byte layout (all integers little-endian)::

    magic      8 bytes   b"FSRLCKPT"
    version    uint32    currently 1
    sig_len    uint32    length of the architecture signature
    signature  sig_len   UTF-8 JSON text
    n_tensors  uint32
    per tensor, in sorted name order:
        name_len  uint16
        name      name_len bytes, UTF-8
        ndim      uint8
        dims      ndim x uint32
        data      prod(dims) x float64, C order
    checksum   32 bytes  SHA-256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FSRLCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray], signature: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    sig = signature.encode("utf-8")
    parts += [struct.pack("<I", len(sig)), sig, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", arr.ndim)]
        parts += [struct.pack("<I", d) for d in arr.shape]
        parts.append(arr.tobytes(order="C"))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], str]:
    if len(blob) < len(MAGIC) + 4 + 32 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    pos = len(MAGIC)

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(body):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, body, pos)
        pos += size
        return vals

    (version,) = read("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (sig_len,) = read("<I")
    signature = body[pos:pos + sig_len].decode("utf-8")
    pos += sig_len
    (n,) = read("<I")
    tensors = {}
    for _ in range(n):
        (name_len,) = read("<H")
        name = body[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = read("<B")
        dims = read("<" + "I" * ndim) if ndim else ()
        count = int(np.prod(dims)) if ndim else 1
        nbytes = 8 * count
        if pos + nbytes > len(body):
            raise CheckpointError(f"truncated data for tensor {name!r}")
        tensors[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(body):
        raise CheckpointError("trailing bytes after tensor table")
    return tensors, signature


def save(path, tensors: dict[str, np.ndarray], signature: str = "") -> None:
    Path(path).write_bytes(encode(tensors, signature))


def load(path) -> tuple[dict[str, np.ndarray], str]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode(blob)
