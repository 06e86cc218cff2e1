"""Named-tensor archive: the on-disk model format.

Layout (all integers little-endian):

    bytes 0..7    magic "PPGTNSR1"
    bytes 8..15   uint64 manifest length M
    bytes 16..    UTF-8 JSON manifest of M bytes:
                      {"meta": {...}, "tensors": [{"name", "dtype", "shape"}, ...]}
    then          each tensor's raw little-endian C-order bytes,
                  concatenated in manifest order

Supported dtypes: f4, f8, i8.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
from io import BytesIO

import numpy as np

from .errors import ArchiveError

MAGIC = b"PPGTNSR1"
_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}


def dump_tensors(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    records = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = arr.dtype.str.lstrip("<>=|")
        if code not in _DTYPES:
            raise ArchiveError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        records.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr).astype(_DTYPES[code], copy=False).tobytes())
    manifest = json.dumps({"meta": meta or {}, "tensors": records}, sort_keys=True).encode("utf-8")
    out = BytesIO()
    out.write(MAGIC)
    out.write(len(manifest).to_bytes(8, "little"))
    out.write(manifest)
    for blob in blobs:
        out.write(blob)
    return out.getvalue()


def parse_tensors(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < len(MAGIC) + 8:
        raise ArchiveError("truncated archive: missing header")
    if data[: len(MAGIC)] != MAGIC:
        raise ArchiveError("bad archive magic")
    m = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 8], "little")
    head_end = len(MAGIC) + 8 + m
    if len(data) < head_end:
        raise ArchiveError("truncated archive: incomplete manifest")
    try:
        manifest = json.loads(data[len(MAGIC) + 8 : head_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"unreadable manifest: {e}") from None
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise ArchiveError("manifest missing tensor records")

    tensors: dict[str, np.ndarray] = {}
    offset = head_end
    for rec in manifest["tensors"]:
        try:
            name, code, shape = rec["name"], rec["dtype"], tuple(rec["shape"])
        except (KeyError, TypeError) as e:
            raise ArchiveError(f"malformed tensor record: {e}") from None
        if code not in _DTYPES:
            raise ArchiveError(f"tensor {name!r} has unsupported dtype {code!r}")
        if name in tensors:
            raise ArchiveError(f"duplicate tensor name {name!r}")
        dtype = np.dtype(_DTYPES[code])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if offset + nbytes > len(data):
            raise ArchiveError(f"truncated archive: tensor {name!r} data incomplete")
        tensors[name] = np.frombuffer(data[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        offset += nbytes
    return tensors, manifest.get("meta", {})


def save_tensors(path: str | os.PathLike, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(dump_tensors(tensors, meta))


def load_tensors(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        return parse_tensors(f.read())
