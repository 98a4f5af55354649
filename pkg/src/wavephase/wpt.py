"""WPT tensor files.

Layout (all little-endian)::

    b"WPT1"             4 bytes
    ndim                u8
    extents             ndim x u64
    payload             prod(extents) x f64, row-major
    [metadata length    u32
     metadata           UTF-8 JSON]

Readers reject truncated payloads and any byte after the declared metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"WPT1"


def dumps(array, metadata=None) -> bytes:
    arr = np.array(array, dtype="<f8", order="C")  # keeps rank 0, unlike ascontiguousarray
    if arr.ndim > 255:
        raise ValueError("rank above 255 is not representable")
    parts = [MAGIC, struct.pack("<B", arr.ndim)]
    parts += [struct.pack("<Q", n) for n in arr.shape]
    parts.append(arr.tobytes(order="C"))
    if metadata is not None:
        blob = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts.append(struct.pack("<I", len(blob)))
        parts.append(blob)
    return b"".join(parts)


def loads(buf: bytes):
    """Parse a WPT byte string into ``(array, metadata_or_None)``."""
    buf = bytes(buf)
    if len(buf) < 5:
        raise FormatError("file too short for header", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    ndim = buf[4]
    off = 5
    need = off + 8 * ndim
    if len(buf) < need:
        raise FormatError(f"truncated extents (need {8 * ndim} bytes)", len(buf))
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off = need
    count = 1
    for n in shape:
        count *= n
    nbytes = 8 * count
    if len(buf) < off + nbytes:
        raise FormatError(f"truncated payload (need {nbytes} bytes)", len(buf))
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
    off += nbytes
    meta = None
    if off < len(buf):
        if len(buf) < off + 4:
            raise FormatError("trailing bytes too short for a metadata length", off)
        (mlen,) = struct.unpack_from("<I", buf, off)
        start = off + 4
        if len(buf) < start + mlen:
            raise FormatError(f"truncated metadata (declared {mlen} bytes)", len(buf))
        if len(buf) > start + mlen:
            raise FormatError("unexpected trailing bytes after metadata", start + mlen)
        try:
            meta = json.loads(buf[start:start + mlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"metadata is not UTF-8 JSON ({exc})", start) from None
    return arr, meta


def write(path, array, metadata=None):
    Path(path).write_bytes(dumps(array, metadata))


def read(path):
    return loads(Path(path).read_bytes())


def pack_params(params):
    """Flatten a parameter dict into one vector plus a layout table."""
    layout = []
    chunks = []
    off = 0
    for name, v in params.items():
        v = np.asarray(v, dtype=np.float64)
        layout.append({"name": name, "shape": list(v.shape), "offset": off})
        chunks.append(v.reshape(-1))
        off += v.size
    return np.concatenate(chunks) if chunks else np.zeros(0), layout


def unpack_params(flat, layout):
    out = {}
    for item in layout:
        size = int(np.prod(item["shape"])) if item["shape"] else 1
        out[item["name"]] = flat[item["offset"]:item["offset"] + size].reshape(item["shape"]).copy()
    return out
