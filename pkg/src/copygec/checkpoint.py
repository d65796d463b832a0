"""Versioned binary checkpoints.

Layout::

    b"COPYGEC\\0"              8-byte magic
    uint32 LE                  format version
    uint64 LE                  header length in bytes
    header                     UTF-8 JSON (sorted keys): model config, metadata,
                               and for every array its name, dtype, shape, offset
    array payload              raw little-endian IEEE-754 data, in header order

The writer is deterministic, so saving the same state twice gives identical
bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"COPYGEC\0"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable checkpoint, unsupported version, or config/shape mismatch."""

    def __init__(self, message: str, mismatches: list[str] | None = None):
        self.mismatches = mismatches or []
        if self.mismatches:
            message = message + ":\n  " + "\n  ".join(self.mismatches)
        super().__init__(message)


@dataclass
class Checkpoint:
    config: dict
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {k[len("param/"):]: v for k, v in self.arrays.items() if k.startswith("param/")}

    def optimizer_arrays(self) -> dict[str, np.ndarray]:
        return {k[len("opt/"):]: v for k, v in self.arrays.items() if k.startswith("opt/")}


def write_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    entries = []
    payload = []
    offset = 0
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"config": ckpt.config, "meta": ckpt.meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in payload:
            fh.write(raw)
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
    base = 20 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = blob[start : start + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return Checkpoint(header["config"], arrays, header.get("meta", {}))


def save_checkpoint(path: str | Path, model, optimizer=None, meta: dict | None = None) -> None:
    """Write model parameters (and optimiser state, if given) to ``path``."""
    arrays = {f"param/{name}": p.data for name, p in model.named_parameters()}
    meta = dict(meta or {})
    if optimizer is not None:
        state = optimizer.state_dict()
        for name, v in state.pop("velocity").items():
            arrays[f"opt/velocity/{name}"] = v
        meta["optimizer"] = state
    write_checkpoint(path, Checkpoint(model.config.to_dict(), arrays, meta))


def load_parameters(model, ckpt: Checkpoint, names: list[str] | None = None, check_config: bool = True) -> None:
    """Copy parameters from ``ckpt`` into ``model`` (all, or only ``names``).

    Raises :class:`CheckpointError` listing every offending parameter when
    shapes, names, or the architecture config disagree.
    """
    params = ckpt.params()
    own = dict(model.named_parameters())
    wanted = list(own) if names is None else list(names)
    problems = []
    if check_config and names is None:
        mine = model.config.to_dict()
        for key in sorted(set(mine) | set(ckpt.config)):
            if key == "dropout":
                continue
            if mine.get(key) != ckpt.config.get(key):
                problems.append(f"config {key}: model={mine.get(key)!r} checkpoint={ckpt.config.get(key)!r}")
    for name in wanted:
        if name not in own:
            problems.append(f"{name}: not a model parameter")
        elif name not in params:
            problems.append(f"{name}: missing from checkpoint")
        elif params[name].shape != own[name].shape:
            problems.append(f"{name}: model shape {own[name].shape} vs checkpoint {params[name].shape}")
    if names is None:
        for name in sorted(set(params) - set(own)):
            problems.append(f"{name}: unexpected in checkpoint")
    if problems:
        raise CheckpointError("checkpoint does not match the model", problems)
    for name in wanted:
        own[name].data = params[name].astype(own[name].dtype, copy=True)


def load_checkpoint(path: str | Path, model, optimizer=None) -> Checkpoint:
    ckpt = read_checkpoint(path)
    load_parameters(model, ckpt)
    if optimizer is not None and "optimizer" in ckpt.meta:
        state = dict(ckpt.meta["optimizer"])
        state["velocity"] = {k[len("velocity/"):]: v for k, v in ckpt.optimizer_arrays().items()}
        optimizer.load_state_dict(state)
    return ckpt
