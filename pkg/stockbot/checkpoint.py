"""Self-describing model checkpoint container.

Layout (all integers little-endian)::

    b"STKB"                      magic
    u16                          format version (1)
    u32                          header length in bytes
    header                       UTF-8 JSON, keys sorted, compact separators
    per tensor, in header order:
        u64                      payload length in bytes
        payload                  float64 '<f8', C order

The header holds ``spec`` (ModelSpec fields), ``step_count``, ``metadata``
(free-form, e.g. normalization stats) and ``tensors`` (list of
``{"name", "shape"}``).
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from stockbot.errors import FormatError, InputNotFoundError
from stockbot.models import ModelSpec, ModelState, build

MAGIC = b"STKB"
VERSION = 1
_LE_DTYPE = np.dtype("<f8")


def _header(state: ModelState, metadata: Optional[Dict[str, Any]]) -> bytes:
    doc = {
        "spec": state.spec.model_dump(mode="json"),
        "step_count": state.step_count,
        "metadata": metadata or {},
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in state.parameters.items()],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dump(state: ModelState, stream: BinaryIO, metadata: Optional[Dict[str, Any]] = None) -> None:
    header = _header(state, metadata)
    stream.write(MAGIC)
    stream.write(struct.pack("<HI", VERSION, len(header)))
    stream.write(header)
    for t in state.parameters.values():
        payload = np.ascontiguousarray(t.data, dtype=_LE_DTYPE).tobytes()
        stream.write(struct.pack("<Q", len(payload)))
        stream.write(payload)


def dumps(state: ModelState, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    buf = io.BytesIO()
    dump(state, buf, metadata)
    return buf.getvalue()


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return data


def load(stream: BinaryIO) -> Tuple[ModelState, Dict[str, Any]]:
    if _read_exact(stream, 4, "magic") != MAGIC:
        raise FormatError("not a stockbot checkpoint (bad magic)")
    version, header_len = struct.unpack("<HI", _read_exact(stream, 6, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        doc = json.loads(_read_exact(stream, header_len, "header").decode("utf-8"))
        spec = ModelSpec.model_validate(doc["spec"])
    except (ValueError, KeyError, ValidationError) as exc:
        raise FormatError(f"checkpoint header is invalid: {exc}") from exc

    arrays: Dict[str, np.ndarray] = {}
    for entry in doc.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        (length,) = struct.unpack("<Q", _read_exact(stream, 8, f"{name} length"))
        expected = int(np.prod(shape, dtype=np.int64)) * _LE_DTYPE.itemsize
        if length != expected:
            raise FormatError(f"{name}: payload is {length} bytes, shape {shape} needs {expected}")
        payload = _read_exact(stream, length, name)
        arrays[name] = np.frombuffer(payload, dtype=_LE_DTYPE).reshape(shape).astype(np.float64)
    if stream.read(1):
        raise FormatError("trailing bytes after the last tensor")

    # Rebuilding from the stored ModelSpec pins the inventory; values then replace the fresh init.
    skeleton = build(spec)
    try:
        state = skeleton.with_arrays(arrays, step_count=int(doc.get("step_count", 0)))
    except ValueError as exc:
        raise FormatError(f"checkpoint does not match its spec: {exc}") from exc
    return state, doc.get("metadata", {})


def loads(data: bytes) -> Tuple[ModelState, Dict[str, Any]]:
    return load(io.BytesIO(data))


def save_checkpoint(path: Union[str, Path], state: ModelState, metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("wb", delete=False, dir=str(path.parent)) as tmp:
        dump(state, tmp, metadata)
        tmp_path = Path(tmp.name)
    os.replace(tmp_path, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelState, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise InputNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        return load(f)
