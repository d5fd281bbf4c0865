"""Versioned binary container for named float64 arrays.

Layout: 8-byte magic, little-endian u32 version, u64 header length, a UTF-8
JSON header, then the concatenated little-endian float64 payload. The header
lists every array's name, shape and element offset, plus free-form metadata,
optimizer hyperparameters and the global step.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"RISLCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict
    metadata: dict = field(default_factory=dict)
    step: int = 0
    optimizer: AdamState | None = None


def write_container(path, arrays: dict, header_extra: dict, magic: bytes = MAGIC) -> None:
    entries, offset, blobs = [], 0, []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    header = dict(header_extra, version=VERSION, arrays=entries)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<IQ", VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


def read_container(path, magic: bytes = MAGIC):
    raw = Path(path).read_bytes()
    if raw[: len(magic)] != magic:
        raise CheckpointError(f"{path}: not a {magic.decode()} file")
    pos = len(magic)
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(raw[pos: pos + hlen].decode("utf-8"))
    payload = np.frombuffer(raw, dtype="<f8", offset=pos + hlen)
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = payload[e["offset"]: e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return header, arrays


def save_checkpoint(path, arrays: dict, metadata: dict | None = None, step: int = 0,
                    optimizer: AdamState | None = None) -> None:
    arrays = dict(arrays)
    extra = {"metadata": metadata or {}, "step": int(step), "optimizer": None}
    if optimizer is not None:
        extra["optimizer"] = {"lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
                              "eps": optimizer.eps, "step": optimizer.step}
        for name in optimizer.m:
            arrays[f"adam.m/{name}"] = optimizer.m[name]
            arrays[f"adam.v/{name}"] = optimizer.v[name]
    write_container(path, arrays, extra)


def load_checkpoint(path) -> Checkpoint:
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    header, arrays = read_container(path)
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"])
        for k, v in arrays.items():
            if k.startswith("adam.m/"):
                opt.m[k[7:]] = v
            elif k.startswith("adam.v/"):
                opt.v[k[7:]] = v
    return Checkpoint(params, header.get("metadata", {}), header.get("step", 0), opt)
