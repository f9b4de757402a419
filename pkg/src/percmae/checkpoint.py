"""Single-file checkpoint format: JSON manifest + raw little-endian array blob.

Layout::

    magic (8 bytes) | manifest length (8 bytes, little-endian uint64)
    | manifest JSON (UTF-8) | concatenated array bytes

The manifest records dtype, shape, byte order, blob offset and byte count for
every named array, plus a free-form ``meta`` dict, so files are fully
self-describing and save/load roundtrips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .exceptions import CheckpointError

MAGIC = b"PMCKPT01"
_FORMAT_VERSION = 1

_SUPPORTED_DTYPES = {"float32", "float64", "int64", "int32", "uint8", "bool"}


def save_arrays(path, arrays: dict, meta: dict | None = None) -> Path:
    """Write named arrays (numpy or torch) and a meta dict to ``path``."""
    path = Path(path)
    entries = {}
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        if isinstance(arr, torch.Tensor):
            arr = arr.detach().cpu().numpy()
        arr = np.asarray(arr)
        dtype = str(arr.dtype)
        if dtype not in _SUPPORTED_DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype!r} for array {name!r}")
        data = np.ascontiguousarray(arr.astype(np.dtype(dtype).newbyteorder("<"))).tobytes()
        entries[name] = {
            "dtype": dtype,
            "shape": list(arr.shape),
            "byte_order": "little",
            "offset": offset,
            "nbytes": len(data),
        }
        blobs.append(data)
        offset += len(data)
    manifest = {"format_version": _FORMAT_VERSION, "meta": meta or {}, "arrays": entries}
    encoded = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)
    return path


def load_arrays(path) -> tuple[dict, dict]:
    """Read a checkpoint file back into ``(arrays, meta)``.

    Corruption (bad magic, truncated blob, size mismatches) raises
    :class:`CheckpointError` with a diff against the manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    (mlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    header_end = len(MAGIC) + 8 + mlen
    try:
        manifest = json.loads(raw[len(MAGIC) + 8 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    blob = raw[header_end:]
    expected = sum(e["nbytes"] for e in manifest["arrays"].values())
    if len(blob) != expected:
        raise CheckpointError(
            f"{path}: blob size mismatch, manifest declares {expected} bytes "
            f"but file holds {len(blob)}"
        )
    arrays = {}
    for name, entry in manifest["arrays"].items():
        start, nbytes = entry["offset"], entry["nbytes"]
        chunk = blob[start : start + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: array {name!r} truncated")
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"])
        arrays[name] = arr.astype(entry["dtype"])  # native byte order, writable copy
    return arrays, manifest["meta"]


def module_arrays(module: torch.nn.Module, prefix: str = "") -> dict:
    """State dict of a module as numpy arrays keyed ``prefix + name``."""
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: dict, prefix: str = "") -> None:
    """Load ``prefix``-keyed arrays into a module, bit-exactly.

    The first missing, extra, or shape/dtype-mismatched array raises
    :class:`CheckpointError` naming it.
    """
    state = module.state_dict()
    stored = {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
    for name, tensor in state.items():
        if name not in stored:
            raise CheckpointError(f"checkpoint is missing array {prefix + name!r}")
        arr = stored.pop(name)
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"array {prefix + name!r} has shape {tuple(arr.shape)}, "
                f"model expects {tuple(tensor.shape)}"
            )
        state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(tensor.dtype)
    if stored:
        extra = sorted(stored)[0]
        raise CheckpointError(f"checkpoint holds unexpected array {prefix + extra!r}")
    module.load_state_dict(state)
