"""Self-describing binary container for checkpoints and dataset caches.

Layout (all integers little-endian)::

    b"DVAEPACK"            8 bytes magic
    version                u32
    header length          u64
    header                 UTF-8 JSON, keys sorted
    payload                concatenated little-endian f64 buffers

The header lists every tensor as {"name", "shape", "offset"} with offsets in
bytes from the start of the payload, plus "payload_bytes". The file length
must match exactly. Writing is byte-deterministic: same inputs, same bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DVAEPACK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class ContainerError(ValueError):
    category = "container"


class ContainerMagicError(ContainerError):
    category = "bad-magic"


class ContainerVersionError(ContainerError):
    category = "version"


class ContainerTruncatedError(ContainerError):
    category = "truncated"


def dumps(header, tensors):
    header = dict(header)
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(buf)
        offset += len(buf)
    header["tensors"] = entries
    header["payload_bytes"] = offset
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def loads(data):
    if len(data) < _PREFIX.size:
        raise ContainerTruncatedError(f"container is {len(data)} bytes, shorter than its fixed prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ContainerMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerVersionError(f"container version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(data) < start + header_len:
        raise ContainerTruncatedError("container header is truncated")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable container header: {exc}") from None
    payload = memoryview(data)[start + header_len :]
    expected = header.get("payload_bytes")
    if not isinstance(expected, int) or len(payload) < expected:
        raise ContainerTruncatedError(f"payload has {len(payload)} bytes, header declares {expected}")
    if len(payload) > expected:
        raise ContainerError(f"{len(payload) - expected} trailing bytes after payload")
    tensors = {}
    for entry in header.pop("tensors"):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        lo = entry["offset"]
        hi = lo + 8 * count
        if lo < 0 or hi > expected:
            raise ContainerTruncatedError(f"tensor {entry['name']!r} runs past the payload")
        arr = np.frombuffer(payload[lo:hi], dtype="<f8").astype(np.float64).reshape(shape)
        tensors[entry["name"]] = arr
    header.pop("payload_bytes")
    return header, tensors


def save(path, header, tensors):
    Path(path).write_bytes(dumps(header, tensors))


def load(path):
    return loads(Path(path).read_bytes())
