"""Binary checkpoints with a bit-exact on-disk layout.

Layout: 8-byte magic, u32 header length, JSON header with sorted keys
(format version, full model config, step, optimizer-moment flag), then each
tensor in sorted name order as u32 name length, utf-8 name, u32 ndim,
u64 dims, raw little-endian float32 payload. Sorting both the JSON keys and
the tensor names makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .errors import ConfigInvalid
from .model import ModelConfig, ParamStore

MAGIC = b"SLMCKPT1"
VERSION = 1


def save_checkpoint(path, params: ParamStore, step: int = 0,
                    moments: dict | None = None) -> None:
    """moments, when given, is {"m": {name: array}, "v": {name: array}}."""
    tensors = dict(params.tensors)
    if moments is not None:
        for name, arr in moments["m"].items():
            tensors[f"moment1.{name}"] = arr
        for name, arr in moments["v"].items():
            tensors[f"moment2.{name}"] = arr
    header = json.dumps(
        {"config": asdict(params.config), "has_moments": moments is not None,
         "step": step, "version": VERSION},
        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (params, step, moments-or-None)."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigInvalid(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != VERSION:
            raise ConfigInvalid(f"{path}: unsupported version {header.get('version')}")
        config = ModelConfig(**header["config"]).validate()
        tensors = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            (nlen,) = struct.unpack("<I", raw)
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            tensors[name] = data.reshape(shape).copy()
    params = ParamStore(config)
    moments = {"m": {}, "v": {}} if header["has_moments"] else None
    for name, arr in tensors.items():
        if name.startswith("moment1."):
            moments["m"][name[len("moment1."):]] = arr
        elif name.startswith("moment2."):
            moments["v"][name[len("moment2."):]] = arr
        else:
            params[name] = arr
    return params, int(header["step"]), moments
