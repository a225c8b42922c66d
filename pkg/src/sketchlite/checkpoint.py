"""Versioned binary checkpoint container shared by all trained artifacts.

Layout: magic, format version, a JSON header (artifact kind, spec, spec
hash, tensor table, free-form metadata), then the raw little-endian tensor
payload in table order.  The loader re-hashes the spec and refuses files
whose header was edited after saving.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SKLC"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    """Raised for corrupt, truncated, or mismatched checkpoint files."""


def spec_hash(spec: dict) -> str:
    """sha256 of the canonical (sorted, compact) JSON encoding of a spec."""
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Checkpoint:
    kind: str
    spec: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, kind: str, spec: dict,
                    tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    table = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {dtype}")
        table.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes())
    header = {
        "kind": kind,
        "spec": spec,
        "spec_hash": spec_hash(spec),
        "tensors": table,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    if spec_hash(header["spec"]) != header["spec_hash"]:
        raise CheckpointError(f"{path}: spec hash mismatch (file was modified)")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise CheckpointError(
            f"{path}: expected a {expect_kind!r} checkpoint, found {header['kind']!r}"
        )
    tensors = {}
    off = 16 + hlen
    for row in header["tensors"]:
        dtype = _DTYPES[row["dtype"]]
        n = int(np.prod(row["shape"], dtype=np.int64)) if row["shape"] else 1
        nbytes = n * np.dtype(dtype).itemsize
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at tensor {row['name']!r}")
        arr = np.frombuffer(raw, dtype=dtype, count=n, offset=off).reshape(row["shape"])
        tensors[row["name"]] = arr.astype(row["dtype"])  # own, writable copy
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(kind=header["kind"], spec=header["spec"],
                      tensors=tensors, meta=header["meta"])


# ---------------------------------------------------------------------------
# torch module <-> tensor-dict bridges.
# ---------------------------------------------------------------------------

def module_tensors(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy().copy()
            for name, p in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    state = module.state_dict()
    if set(state) != set(tensors):
        missing = set(state) ^ set(tensors)
        raise CheckpointError(f"parameter names do not match module: {sorted(missing)}")
    module.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in tensors.items()})
