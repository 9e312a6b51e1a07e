"""Single-file container: one JSON header line plus raw array blocks.

Used for the retrieval index and for model checkpoints. The header carries a
format tag, a version, arbitrary metadata, and the block directory; blocks
follow as little-endian C-order bytes in directory order. Writes are byte
deterministic: same content in, same file out.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import SchemaError

__all__ = ["write_blockfile", "read_blockfile"]

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4"}


def write_blockfile(
    path: str | Path,
    format_tag: str,
    version: int,
    meta: dict,
    blocks: dict[str, np.ndarray],
) -> None:
    directory = []
    payloads = []
    for name, array in blocks.items():
        dtype = str(array.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"block {name!r} has unsupported dtype {dtype}")
        directory.append({"name": name, "dtype": dtype, "shape": list(array.shape)})
        payloads.append(np.ascontiguousarray(array).astype(_DTYPES[dtype]).tobytes())
    header = {"format": format_tag, "version": version, "meta": meta, "blocks": directory}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for payload in payloads:
            fh.write(payload)


def read_blockfile(path: str | Path, expected_format: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: not a block container ({exc})") from exc
        if header.get("format") != expected_format:
            raise SchemaError(
                f"{path}: format {header.get('format')!r}, expected {expected_format!r}"
            )
        if header.get("version") != 1:
            raise SchemaError(f"{path}: unsupported version {header.get('version')!r}")
        blocks: dict[str, np.ndarray] = {}
        for entry in header.get("blocks", []):
            name, dtype, shape = entry["name"], entry["dtype"], tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * np.dtype(_DTYPES[dtype]).itemsize)
            if len(raw) != count * np.dtype(_DTYPES[dtype]).itemsize:
                raise SchemaError(f"{path}: truncated block {name!r}")
            blocks[name] = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape).astype(dtype)
    return header, blocks
