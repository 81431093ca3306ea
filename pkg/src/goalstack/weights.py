"""Flat key->tensor weights container with a documented binary layout.

Layout (little-endian throughout):

    magic   4 bytes  b"GSTW"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u16, name utf-8 bytes
        ndim     u8,  dims u32 * ndim
        payload  f32 * prod(dims), C order

A JSON manifest (same stem, .json) lists {"version": 1, "tensors": {name: shape}}
so shapes can be validated against module configs without parsing the blob.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"GSTW"
VERSION = 1


def save_weights(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(tensors))
    manifest = {}
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes(order="C")
        manifest[name] = list(arr.shape)
    path.write_bytes(bytes(blob))
    path.with_suffix(".json").write_text(json.dumps({"version": VERSION, "tensors": manifest}, indent=2, sort_keys=True))


def load_weights(path: str | Path, expected_shapes: dict[str, tuple] | None = None) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ConfigError(f"{path}: not a weights file (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported weights version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        out[name] = arr.astype(np.float64)
    if offset != len(raw):
        raise ConfigError(f"{path}: trailing bytes after last tensor")
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in out:
                raise ConfigError(f"{path}: missing tensor {name!r}")
            if tuple(out[name].shape) != tuple(shape):
                raise ConfigError(f"{path}: tensor {name!r} has shape {out[name].shape}, expected {tuple(shape)}")
    return out


def mlp_expected_shapes(dims: list[int], prefix: str) -> dict:
    """Tensor names/shapes an MLP of the given layer dims occupies in a weights file."""
    out = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        out[f"{prefix}.w{i}"] = (a, b)
        out[f"{prefix}.b{i}"] = (b,)
    return out


def attention_expected_shapes(dim: int, prefix: str) -> dict:
    return {f"{prefix}.{n}": (dim, dim) for n in ("wq", "wk", "wv", "wo")}


def mlp_tensors(params, prefix: str) -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def attention_tensors(params, prefix: str) -> dict:
    return {f"{prefix}.wq": params.wq, f"{prefix}.wk": params.wk, f"{prefix}.wv": params.wv, f"{prefix}.wo": params.wo}
