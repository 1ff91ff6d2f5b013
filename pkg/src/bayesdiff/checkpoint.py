"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic    4 bytes  b"BDIF"
    version  u32
    count    u32      number of entries
    entry*   name_len u16, name (utf-8), dtype u8, ndim u8,
             shape u64 * ndim, nbytes u64, raw little-endian data

dtype codes: 1 float64, 2 int64, 3 uint8.  Run metadata is a JSON document
stored as the uint8 entry ``__meta__``.
"""
import json
import struct

import numpy as np

from .errors import InputError

MAGIC = b"BDIF"
VERSION = 1
_CODES = {1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_KINDS = {"f": 1, "i": 2, "u": 3, "b": 3}


def _code(a):
    code = _KINDS.get(a.dtype.kind)
    if code is None:
        raise InputError(f"cannot store dtype {a.dtype}")
    return code


def encode(arrays, meta):
    """Serialise named arrays plus a JSON-able metadata dict."""
    items = dict(arrays)
    items["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    out = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name in sorted(items):
        a = np.asarray(items[name])
        code = _code(a)
        a = np.ascontiguousarray(a, dtype=_CODES[code])
        raw = a.tobytes()
        nm = name.encode()
        out.append(struct.pack("<H", len(nm)) + nm)
        out.append(struct.pack("<BB", code, a.ndim))
        out.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(struct.pack("<Q", len(raw)) + raw)
    return b"".join(out)


def decode(blob):
    """Inverse of ``encode``; returns ``(arrays, meta)``."""
    mv = memoryview(blob)
    if bytes(mv[:4]) != MAGIC:
        raise InputError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", mv, 4)
    if version != VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    off = 12
    arrays = {}
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", mv, off)
            off += 2
            name = bytes(mv[off: off + ln]).decode()
            off += ln
            code, ndim = struct.unpack_from("<BB", mv, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}Q", mv, off)
            off += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", mv, off)
            off += 8
            a = np.frombuffer(mv[off: off + nbytes], dtype=_CODES[code]).reshape(shape)
            off += nbytes
            arrays[name] = a.astype(_CODES[code].newbyteorder("="), copy=True)
    except (struct.error, KeyError, ValueError) as exc:
        raise InputError(f"corrupt checkpoint: {exc}") from exc
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    return arrays, meta
