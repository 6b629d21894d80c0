"""Checkpoint container: JSON manifest plus raw little-endian float32 arrays.

Layout: ``b"SSCK"``, format version (u32), manifest length (u32), the UTF-8
manifest, then the concatenated tensor payloads. Each manifest entry carries
``name``, ``shape`` and the byte ``offset`` into the payload.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from ..errors import ParseError

MAGIC = b"SSCK"
FORMAT_VERSION = 1


def _as_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().to(torch.float32).numpy()
    return np.ascontiguousarray(np.asarray(value, dtype="<f4"))


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(tensors: Mapping[str, object], meta: Mapping | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = _as_array(tensors[name])
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"tensors": entries, "meta": dict(meta or {})}, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, len(manifest))
    return header + manifest + b"".join(blobs)


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:4] != MAGIC:
        raise ParseError("not a checkpoint file (bad magic)")
    version, mlen = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    manifest = json.loads(data[12:12 + mlen].decode("utf-8"))
    base = 12 + mlen
    out = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = base + entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        out[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return out, manifest["meta"]


def save_checkpoint(path, tensors: Mapping[str, object], meta: Mapping | None = None) -> None:
    atomic_write_bytes(path, encode_checkpoint(tensors, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())


def save_module(path, module: torch.nn.Module, meta: Mapping | None = None) -> None:
    save_checkpoint(path, module.state_dict(), meta)


def load_module(path, module: torch.nn.Module) -> dict:
    tensors, meta = load_checkpoint(path)
    current = module.state_dict()
    state = {k: torch.from_numpy(v).to(current[k].dtype) for k, v in tensors.items()}
    module.load_state_dict(state)
    return meta
