"""Versioned binary container for arrays with a JSON header.

Layout (all integers little-endian)::

    magic      8 bytes   b"IGAUQBIN"
    version    uint32
    header_len uint64
    header     header_len bytes of UTF-8 JSON
    payload    raw array bytes, little-endian, C order, concatenated

The header holds ``kind``, free-form ``meta``, one record
``{name, dtype, shape, offset, nbytes}`` per array (offsets relative to the
payload start) and the SHA-256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"IGAUQBIN"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class ContainerError(ValueError):
    pass


def _canon(a):
    a = np.asarray(a)
    if a.dtype.byteorder == ">":
        a = a.astype(a.dtype.newbyteorder("<"))
    return np.ascontiguousarray(a)


def encode(kind, meta, arrays) -> bytes:
    records, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = _canon(arrays[name])
        b = a.tobytes()
        records.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(b)})
        chunks.append(b)
        offset += len(b)
    payload = b"".join(chunks)
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": records,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(hb)) + hb + payload


def decode(data: bytes):
    """Return ``(kind, meta, arrays)``; raise :class:`ContainerError` on any inconsistency."""
    if len(data) < _PREFIX.size:
        raise ContainerError("truncated container")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError("bad magic")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise ContainerError("truncated header")
    try:
        header = json.loads(data[_PREFIX.size : start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError("unreadable header") from exc
    payload = data[start:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ContainerError("payload checksum mismatch")
    arrays = {}
    for rec in header["arrays"]:
        lo, n = rec["offset"], rec["nbytes"]
        if lo + n > len(payload):
            raise ContainerError(f"array {rec['name']} exceeds payload")
        a = np.frombuffer(payload[lo : lo + n], dtype=np.dtype(rec["dtype"])).reshape(rec["shape"])
        arrays[rec["name"]] = a.copy()
    return header["kind"], header["meta"], arrays


def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path, kind, meta, arrays):
    atomic_write_bytes(path, encode(kind, meta, arrays))


def read_container(path, kind=None):
    with open(path, "rb") as fh:
        out = decode(fh.read())
    if kind is not None and out[0] != kind:
        raise ContainerError(f"expected container kind {kind!r}, found {out[0]!r}")
    return out
