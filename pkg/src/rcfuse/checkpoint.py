"""Checkpoint container: a single file holding named parameter arrays as
little-endian float32 payloads behind a JSON header, plus the config hash and
step counter. Round-trips are bit-exact.

File layout: magic 'RCFK', uint32 header length, UTF-8 JSON header, then the
concatenated raw payloads in header (sorted-name) order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"RCFK"


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict, config_hash: str = "", step: int = 0):
    """Write name -> numpy array mappings; names are stored sorted."""
    names = sorted(arrays)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate parameter names")
    entries = []
    payloads = []
    offset = 0
    for name in names:
        arr = np.asarray(arrays[name], dtype="<f4")
        if arr.ndim > 0:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "<f4",
             "offset": offset, "nbytes": arr.nbytes}
        )
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"config_hash": config_hash, "step": step, "arrays": entries},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for p in payloads:
            f.write(p)


def load_arrays(path):
    """Returns (name -> numpy array, meta dict with config_hash and step)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode())
    base = 8 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = raw[start : start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(e["shape"]).copy()
    return arrays, {"config_hash": header["config_hash"], "step": header["step"]}


def save_checkpoint(model: torch.nn.Module, path, step: int = 0,
                    config_hash: str = ""):
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    save_arrays(path, arrays, config_hash=config_hash, step=step)


def load_checkpoint(model: torch.nn.Module, path, expect_hash: str = None):
    """Load parameters into `model`; returns the checkpoint meta. A config
    hash mismatch is reported as a warning string in meta['warning']."""
    arrays, meta = load_arrays(path)
    state = model.state_dict()
    for name in state:
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing parameter {name}")
        t = torch.as_tensor(arrays[name], dtype=state[name].dtype)
        if t.shape != state[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {tuple(t.shape)} vs "
                f"{tuple(state[name].shape)}"
            )
        state[name] = t
    model.load_state_dict(state)
    if expect_hash and meta["config_hash"] and meta["config_hash"] != expect_hash:
        meta["warning"] = (
            f"config hash mismatch: checkpoint {meta['config_hash']} vs "
            f"current {expect_hash}"
        )
    return meta
