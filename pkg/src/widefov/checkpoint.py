"""Binary checkpoint container.

Layout::

    b"WFOVCKPT" | u32 format version | u64 manifest length | manifest JSON | tensor data

All integers are little-endian. Tensors are stored as little-endian float32
at the byte offsets listed in the manifest (relative to the data section).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

MAGIC = b"WFOVCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: Mapping[str, torch.Tensor], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(meta, format=FORMAT_VERSION, endianness="little", dtype="float32", tensors=entries)
    blob = json.dumps(manifest, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)
    tmp.replace(path)
    return path


def read_manifest(path) -> tuple[dict, int]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, n = _HEADER.unpack(head)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        manifest = json.loads(fh.read(n))
    return manifest, _HEADER.size + n


def load_checkpoint(path, expected_hash: str | None = None) -> tuple[dict[str, torch.Tensor], dict]:
    """Return (tensors, manifest); refuse when ``expected_hash`` differs from the stored one."""
    manifest, data_start = read_manifest(path)
    if expected_hash is not None and manifest.get("config_hash") != expected_hash:
        raise CheckpointError(
            f"{path}: config hash {manifest.get('config_hash')} does not match {expected_hash}"
        )
    raw = Path(path).read_bytes()[data_start:]
    tensors = {}
    for e in manifest["tensors"]:
        chunk = raw[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: tensor {e['name']} is truncated")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(np.float32))
    return tensors, manifest
