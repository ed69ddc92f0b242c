"""Binary parameter checkpoints.

Layout: an 8-byte magic, a uint32 format version, a JSON metadata block
(architecture config, pooling fraction, epoch, training history), then
an entry count followed by named arrays. Each entry stores the name,
a dtype code, the shape, and the raw little-endian float payload in C
order. All multi-byte integers are little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"GMICCKPT"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 4, np.dtype(np.float64): 8}
_CODE_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_bytes = json.dumps(_json_safe(meta)).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise ConfigError(f"checkpoint entry {name!r} has non-float dtype {arr.dtype}")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_entries,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise ConfigError(f"{path}: entry {name!r} has unknown dtype code {code}")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += count * dtype.itemsize
        arrays[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return meta, arrays


def model_from_checkpoint(path):
    """Rebuild a model from the embedded config and load its weights."""
    from .model import GMIC
    from .networks import NetworkConfig

    meta, arrays = load_checkpoint(path)
    if "network" not in meta:
        raise ConfigError(f"{path}: checkpoint metadata lacks a network config")
    net_cfg = NetworkConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["network"].items()})
    model = GMIC(net_cfg, float(meta.get("pool_fraction", 1.0)), seed=0)
    model.load_state({k: v for k, v in arrays.items() if not k.startswith("opt/")})
    return model, meta
