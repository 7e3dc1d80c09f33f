"""Parameter checkpoint: a JSON manifest followed by raw little-endian float64 arrays.

Layout::

    b"MVRECKPT"                 8-byte magic
    uint32 LE                   format version
    uint64 LE                   manifest length in bytes
    manifest                    UTF-8 JSON (sorted keys)
    data                        concatenated '<f8' arrays, C order

Each manifest entry gives ``name``, ``shape`` and ``offset`` (bytes from the
start of the data section). Metadata (model config, vocabularies) rides in
the manifest's ``meta`` object so a checkpoint is self-describing.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataValidationError

MAGIC = b"MVRECKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def to_bytes(params: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    offset = 0
    chunks = []
    for name, arr in params.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "params": entries, "meta": meta or {}}
    head = json.dumps(manifest, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(chunks)


def from_bytes(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < _HEADER.size:
        raise DataValidationError("checkpoint truncated before header")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataValidationError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise DataValidationError(f"unsupported checkpoint version {version}")
    start = _HEADER.size
    manifest = json.loads(blob[start:start + mlen].decode("utf-8"))
    data = memoryview(blob)[start + mlen:]
    params: dict[str, np.ndarray] = {}
    for e in manifest["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 8 * n
        if end > len(data):
            raise DataValidationError(f"checkpoint truncated inside {e['name']!r}")
        arr = np.frombuffer(data[e["offset"]:end], dtype="<f8").astype(np.float64)
        params[e["name"]] = arr.reshape(e["shape"])
    return params, manifest.get("meta", {})


def save(path: str | Path, params: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(params, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return from_bytes(Path(path).read_bytes())


def manifest_names(path: str | Path) -> list[str]:
    blob = Path(path).read_bytes()
    _, _, mlen = _HEADER.unpack_from(blob)
    manifest = json.loads(blob[_HEADER.size:_HEADER.size + mlen].decode("utf-8"))
    return [e["name"] for e in manifest["params"]]
