"""Line-delimited JSON helpers and the versioned binary container.

Container layout (all integers little-endian)::

    magic        8 bytes, identifies the artifact kind
    version      uint32
    header_len   uint64
    header       UTF-8 JSON, keys sorted
    payload      concatenated raw array buffers

The header carries arbitrary metadata plus an ``arrays`` list with the name,
dtype, shape, offset and byte length of every array in the payload.  Output
is a pure function of the inputs, so identical artifacts hash identically.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

_PREFIX = struct.Struct("<8sIQ")


class FormatError(ValueError):
    """Raised for a container with the wrong magic or an unsupported version."""


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(path: str | Path, rows: Iterable[Mapping[str, Any]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps_json(row))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj: Any) -> str:
    return hashlib.sha256(dumps_json(obj).encode("utf-8")).hexdigest()


def pack_container(
    magic: bytes, version: int, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]
) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    specs = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        # force little-endian storage
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        buf = arr.tobytes()
        specs.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
             "offset": offset, "nbytes": len(buf)}
        )
        blobs.append(buf)
        offset += len(buf)
    header = dumps_json({"meta": dict(meta), "arrays": specs}).encode("utf-8")
    return _PREFIX.pack(magic, version, len(header)) + header + b"".join(blobs)


def unpack_container(
    data: bytes, magic: bytes, version: int
) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size:
        raise FormatError("truncated container")
    got_magic, got_version, header_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise FormatError(f"format version {got_version} not supported (expected {version})")
    start = _PREFIX.size
    header = json.loads(data[start:start + header_len].decode("utf-8"))
    base = start + header_len
    arrays = {}
    for spec in header["arrays"]:
        lo = base + spec["offset"]
        arr = np.frombuffer(data[lo:lo + spec["nbytes"]], dtype=np.dtype(spec["dtype"]))
        arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
    return header["meta"], arrays


def write_container(path: str | Path, magic: bytes, version: int,
                    meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(pack_container(magic, version, meta, arrays))


def read_container(path: str | Path, magic: bytes,
                   version: int) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    return unpack_container(Path(path).read_bytes(), magic, version)
