"""Checkpoint container: magic "RGMPS001", a JSON header describing config and
tensor layout, then a little-endian IEEE-754 float32 payload.

Layout:

    bytes 0..8    magic b"RGMPS001"
    bytes 8..16   header length (unsigned 64-bit little-endian)
    header        UTF-8 JSON {version, config, tensors: [{name, shape, dtype,
                  byte_offset}]}; offsets are relative to the payload start
    payload       tensor data in header order, float32 little-endian

Parameters and persistent buffers (batchnorm running statistics) are both
stored.  Writes are atomic; identical models serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigurationError, InputError
from .fileio import atomic_write_bytes

MAGIC = b"RGMPS001"
VERSION = 1


def _named_tensors(model):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, buf in model.named_buffers():
        yield name, buf


def save_checkpoint(path: str, model) -> None:
    """Serialize `model` (anything with .config, named_parameters, named_buffers)."""
    tensors = []
    chunks = []
    offset = 0
    for name, arr in _named_tensors(model):
        a32 = np.ascontiguousarray(arr, dtype="<f4")
        tensors.append({
            "name": name,
            "shape": list(a32.shape),
            "dtype": "float32",
            "byte_offset": offset,
        })
        chunks.append(a32.tobytes())
        offset += len(chunks[-1])
    config = {"model": model.model_kind, **model.config.to_json()}
    header = {"version": VERSION, "config": config, "tensors": tensors}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    atomic_write_bytes(path, MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks))


def read_checkpoint(path: str):
    """-> (header dict, {name: float64 array}) without building a model."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise InputError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise InputError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputError(f"{path}: unreadable header: {e}") from e
    if header.get("version") != VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    payload = blob[16 + hlen:]
    state = {}
    for t in header["tensors"]:
        if t["dtype"] != "float32":
            raise InputError(f"{path}: unsupported tensor dtype {t['dtype']!r}")
        n = int(np.prod(t["shape"], dtype=np.int64)) if t["shape"] else 1
        start = t["byte_offset"]
        end = start + 4 * n
        if end > len(payload):
            raise InputError(f"{path}: truncated payload at tensor {t['name']!r}")
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(t["shape"])
        state[t["name"]] = arr.astype(np.float64)
    return header, state


def load_state(model, state: dict) -> None:
    """Assign every named tensor, validating names and shapes both ways."""
    seen = set()
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, arr in state.items():
        if name in params:
            if params[name].data.shape != arr.shape:
                raise ConfigurationError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"model expects {params[name].data.shape}")
            params[name].assign(arr)
        elif name in buffers:
            if buffers[name].shape != arr.shape:
                raise ConfigurationError(
                    f"checkpoint buffer {name!r} has shape {arr.shape}, "
                    f"model expects {buffers[name].shape}")
            model.set_buffer_by_name(name, arr)
        else:
            raise ConfigurationError(f"checkpoint tensor {name!r} not present in model")
        seen.add(name)
    missing = (set(params) | set(buffers)) - seen
    if missing:
        raise ConfigurationError(f"checkpoint is missing tensors: {sorted(missing)}")


def load_model(path: str):
    """Rebuild the model named in the header and load its weights."""
    header, state = read_checkpoint(path)
    config = dict(header["config"])
    kind = config.pop("model", "rasnet")
    if kind == "rasnet":
        from .model import PolicyConfig, PolicyNet
        model = PolicyNet(PolicyConfig.from_json(config), seed=0)
    elif kind == "cnn":
        from .baseline import CNNConfig, CNNBaseline
        model = CNNBaseline(CNNConfig.from_json(config), seed=0)
    else:
        raise InputError(f"{path}: unknown model kind {kind!r}")
    load_state(model, state)
    model.eval()
    return model
