"""The "SEA1" tensor checkpoint format.

Layout (little-endian): magic ``SEA1``, u16 version, u32 tensor count, then per
tensor a u32-length-prefixed UTF-8 name, u32 ndim, u32 dims, and float32 data;
then a u32-length-prefixed opaque extra block; then CRC32 of all prior bytes.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = b"SEA1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors, extra: bytes = b"") -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    parts.append(struct.pack("<I", len(extra)) + extra)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], bytes]:
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise CheckpointError("not a SEA1 checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch (file is corrupt or truncated)")
    version, count = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    off = 10
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<I", body, off)
            shape = struct.unpack_from(f"<{ndim}I", body, off + 4)
            off += 4 + 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
            off += 4 * size
        (n,) = struct.unpack_from("<I", body, off)
        extra = body[off + 4:off + 4 + n]
        if off + 4 + n != len(body):
            raise CheckpointError("trailing bytes after checkpoint extra block")
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return tensors, extra


def save(path, tensors, extra: bytes = b""):
    with open(path, "wb") as fh:
        fh.write(encode(tensors, extra))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
