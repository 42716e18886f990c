"""Flat binary container: JSON header plus raw little-endian arrays.

One format backs every serialized artifact (descriptor banks, sparse codes,
projection models). Bytes are deterministic for identical content: header
keys are sorted, there are no timestamps, and arrays are written C-order
little-endian.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MAGIC = b"HFM1"

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partials."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def pack(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8", copy=False)
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8", copy=False)
        else:
            raise ValueError(f"array {name!r} has unsupported dtype {arr.dtype}")
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return MAGIC + len(header).to_bytes(4, "little") + header + b"".join(blobs)


def unpack(data: bytes, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    if data[:4] != MAGIC:
        raise ValueError(f"{source}: not a container file")
    hlen = int.from_bytes(data[4:8], "little")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{source}: corrupt container header") from exc
    arrays: dict[str, np.ndarray] = {}
    pos = 8 + hlen
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise ValueError(f"{source}: unsupported dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if len(data) - pos < nbytes:
            raise ValueError(f"{source}: truncated array {entry['name']!r}")
        arr = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
        arrays[entry["name"]] = arr.reshape(shape).copy()
        pos += nbytes
    return header["meta"], arrays


def write_container(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, pack(meta, arrays))


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    return unpack(path.read_bytes(), str(path))
