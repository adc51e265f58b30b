"""Versioned binary checkpoints.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"TAUGCKPT"
    offset 8   u32       format version (currently 1)
    offset 12  u32       header length H in bytes
    offset 16  H bytes   UTF-8 JSON header, keys sorted, no whitespace
    offset 16+H          payload: arrays back to back as little-endian float32

The header holds ``tensors``: a list of ``{"name", "shape", "offset",
"nbytes"}`` where ``offset`` is relative to the payload start, plus an
``optimizer`` block (step, lr, weight_decay, betas, eps) and a free-form
``meta`` mapping. Optimizer moments are stored as tensors named
``opt.m.<param>`` and ``opt.v.<param>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TAUGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], optimizer: dict | None = None, meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"version": VERSION, "tensors": entries, "optimizer": optimizer or {}, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict, dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(blob[start:start + e["nbytes"]], dtype="<f4").reshape(e["shape"])
        tensors[e["name"]] = arr.astype(np.float32)
    return tensors, header["optimizer"], header["meta"]


def model_state(model, opt_state=None, prefix="") -> tuple[dict[str, np.ndarray], dict]:
    tensors = {prefix + k: v for k, v in model.state_dict().items()}
    opt = {}
    if opt_state is not None:
        for k, v in opt_state.m.items():
            tensors["opt.m." + k] = v
        for k, v in opt_state.v.items():
            tensors["opt.v." + k] = v
        opt = {"step": opt_state.step, "lr": opt_state.lr, "weight_decay": opt_state.weight_decay,
               "betas": list(opt_state.betas), "eps": opt_state.eps}
    return tensors, opt


def save(path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    return loads(Path(path).read_bytes())
