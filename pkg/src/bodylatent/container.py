"""Binary envelope shared by decoders, network weights and model bundles.

Layout::

    magic   4 bytes  b"BLAT"
    version uint32   little endian
    hlen    uint32   byte length of the JSON header
    header  JSON     {"kind": str, "meta": {...}, "arrays": [{"name": str, "shape": [...]}, ...]}
    body    float64  little endian, row-major, arrays concatenated in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BLAT"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class ContainerError(ValueError):
    pass


def pack(kind: str, arrays: dict, meta: dict | None = None) -> bytes:
    names = list(arrays)
    mats = [np.asarray(arrays[n], dtype="<f8", order="C") for n in names]
    header = {
        "kind": kind,
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(m.shape)} for n, m in zip(names, mats)],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    return b"".join([_PREFIX.pack(MAGIC, VERSION, len(hbytes)), hbytes] + [m.tobytes() for m in mats])


def unpack(blob: bytes, kind: str | None = None):
    """Inverse of :func:`pack`; returns ``(arrays, meta)``."""
    if len(blob) < _PREFIX.size:
        raise ContainerError("file too short for a container header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version} (expected {VERSION})")
    end = _PREFIX.size + hlen
    if len(blob) < end:
        raise ContainerError("truncated container header")
    try:
        header = json.loads(blob[_PREFIX.size : end])
    except ValueError as exc:
        raise ContainerError(f"corrupt container header: {exc}") from None
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"expected a {kind!r} container, found {header.get('kind')!r}")
    arrays = {}
    offset = end
    for entry in header["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        stop = offset + 8 * count
        if stop > len(blob):
            raise ContainerError(f"truncated data for array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset = stop
    if offset != len(blob):
        raise ContainerError(f"{len(blob) - offset} trailing bytes after the last array")
    return arrays, header["meta"]


def write(path, kind: str, arrays: dict, meta: dict | None = None) -> None:
    Path(path).write_bytes(pack(kind, arrays, meta))


def read(path, kind: str | None = None):
    return unpack(Path(path).read_bytes(), kind)


def save_decoder(decoder, path) -> None:
    write(path, "decoder", decoder.to_arrays(), {"type": type(decoder).__name__})


def decoder_from(arrays: dict, meta: dict):
    from .latent.affine import AffineDecoder
    from .latent.body import SkinnedBody

    types = {"AffineDecoder": AffineDecoder, "SkinnedBody": SkinnedBody}
    if meta.get("type") not in types:
        raise ContainerError(f"unknown decoder type {meta.get('type')!r}")
    return types[meta["type"]].from_arrays(arrays)


def load_decoder(path):
    arrays, meta = read(path, "decoder")
    return decoder_from(arrays, meta)
