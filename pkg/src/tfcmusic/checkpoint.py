"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic   8 bytes  b"TFCCKPT\\x00"
    version u32
    hlen    u64      length of the JSON header
    header  hlen bytes of UTF-8 JSON:
              {"config": ..., "meta": ...,
               "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    data    concatenated little-endian IEEE-754 tensor payloads

Offsets are relative to the start of the data section. Tensors are stored in
the order given, so a save/load/save cycle reproduces the file byte for byte.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError

MAGIC = b"TFCCKPT\x00"
VERSION = 1
_DTYPES = {"<f4": np.float32, "<f8": np.float64, "<i8": np.int64}


def _as_numpy(value):
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype == np.float32:
        return arr.astype("<f4", copy=False)
    if arr.dtype == np.float64:
        return arr.astype("<f8", copy=False)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype("<i8", copy=False)
    raise ConfigError(f"unsupported tensor dtype {arr.dtype}")


def save(path, tensors, config=None, meta=None):
    """Write ``tensors`` (name -> array/tensor) plus JSON-able config/meta."""
    entries, blobs, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(_as_numpy(value))
        raw = arr.tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config or {}, "meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)
    return path


def load(path):
    """Returns ``(tensors, config, meta)``; tensors are numpy arrays in file order."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start : start + hlen])
    base = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        if entry["dtype"] not in _DTYPES:
            raise ConfigError(f"{path}: unsupported dtype {entry['dtype']}")
        lo = base + entry["offset"]
        arr = np.frombuffer(data, dtype=dtype, count=entry["nbytes"] // dtype.itemsize, offset=lo)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, header["config"], header["meta"]


def count_scalars(path, prefix="model/"):
    """Number of stored scalars under ``prefix``, read from the header only."""
    tensors, _, _ = load(path)
    return int(sum(arr.size for name, arr in tensors.items() if name.startswith(prefix)))
