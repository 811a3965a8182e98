"""Binary checkpoint format.

Layout: ``b"PIMF"``, a little-endian uint32 version, a uint64 header length,
a UTF-8 JSON header, then the raw little-endian bytes of every array in
header order. The header lists ``name``, ``shape``, ``dtype``, ``offset`` and
``nbytes`` for each array and echoes the model config plus caller metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, TwoStreamModel
from .tensor import AdamState

MAGIC = b"PIMF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _arrays(model: TwoStreamModel, state: AdamState | None) -> list[tuple[str, np.ndarray]]:
    named = list(model.named_parameters())
    arrays = [(name, p.data) for name, p in named]
    if state is not None and state.m:
        arrays += [(f"adam.m.{name}", m) for (name, _), m in zip(named, state.m)]
        arrays += [(f"adam.v.{name}", v) for (name, _), v in zip(named, state.v)]
    return arrays


def save_checkpoint(path, model: TwoStreamModel, state: AdamState | None = None, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in _arrays(model, state):
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"model": model.config.to_dict(), "meta": meta or {}, "arrays": entries}
    if state is not None:
        header["optimizer"] = {k: getattr(state, k) for k in
                               ("learning_rate", "weight_decay", "beta1", "beta2", "epsilon", "decoupled", "t")}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(header, {name: array})``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    body = memoryview(data)[16 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        if e["offset"] + e["nbytes"] > len(body):
            raise CheckpointError(f"{path}: truncated at array {e['name']}")
        buf = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header, arrays


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Rebuild the model (and optimizer state if stored). Returns ``(model, state, meta)``.

    With ``expect`` given, any geometry difference from the stored config is an error.
    """
    header, arrays = read_checkpoint(path)
    config = ModelConfig(**header["model"])
    if expect is not None:
        mine, theirs = expect.to_dict(), config.to_dict()
        diff = sorted(k for k in mine if k != "seed" and mine[k] != theirs.get(k))
        if diff:
            raise CheckpointError(f"{path}: model geometry mismatch in {diff}")
    model = TwoStreamModel(config)
    named = list(model.named_parameters())
    for name, p in named:
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        arr = arrays[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, model expects {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=False)
    state = None
    if "optimizer" in header:
        opt = header["optimizer"]
        state = AdamState(**{k: opt[k] for k in opt if k != "t"})
        state.t = opt["t"]
        if f"adam.m.{named[0][0]}" in arrays:
            state.m = [arrays[f"adam.m.{n}"] for n, _ in named]
            state.v = [arrays[f"adam.v.{n}"] for n, _ in named]
        else:
            state.init_for(model.parameters())
    return model, state, header.get("meta", {})
