"""Versioned named-tensor checkpoints.

A checkpoint is a directory holding two files:

``manifest.json``
    ``{"format": "personsynth-ckpt", "version": 1, "meta": {...},
    "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}``.
    ``meta`` is arbitrary JSON; nested structures that contained tensors hold
    ``{"__tensor__": name}`` placeholders.
``tensors.bin``
    The raw little-endian tensor bytes, concatenated in manifest order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

FORMAT = "personsynth-ckpt"
VERSION = 1

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int64: "int64",
    torch.int32: "int32",
    torch.bool: "bool",
}
_NP = {v: np.dtype(v).newbyteorder("<") for v in _DTYPES.values()}


class CheckpointError(RuntimeError):
    pass


def _pack(obj, prefix, tensors):
    if isinstance(obj, torch.Tensor):
        tensors[prefix] = obj
        return {"__tensor__": prefix}
    if isinstance(obj, dict):
        return {"__dict__": [[k, _pack(v, f"{prefix}/{k}", tensors)] for k, v in obj.items()]}
    if isinstance(obj, (list, tuple)):
        return [_pack(v, f"{prefix}/{i}", tensors) for i, v in enumerate(obj)]
    return obj


def _unpack(obj, tensors):
    if isinstance(obj, dict):
        if "__tensor__" in obj:
            return tensors[obj["__tensor__"]]
        if "__dict__" in obj:
            return {k: _unpack(v, tensors) for k, v in obj["__dict__"]}
        return {k: _unpack(v, tensors) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unpack(v, tensors) for v in obj]
    return obj


def save_checkpoint(path, tensors: dict, meta: dict = None, state: dict = None) -> Path:
    """Write ``tensors`` (name -> tensor) plus JSON ``meta``.

    ``state`` may be any nesting of dicts/lists holding tensors (e.g. optimizer
    state dicts); its tensors are stored under ``state/...`` names.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = dict(tensors)
    packed_state = _pack(state, "state", tensors) if state is not None else None
    entries, offset = [], 0
    with open(path / "tensors.bin", "wb") as fh:
        for name, t in tensors.items():
            t = t.detach().cpu().contiguous()
            if t.dtype not in _DTYPES:
                raise CheckpointError(f"unsupported dtype {t.dtype} for tensor {name}")
            dt = _DTYPES[t.dtype]
            data = t.numpy().astype(_NP[dt], copy=False).tobytes()
            fh.write(data)
            entries.append({"name": name, "dtype": dt, "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
            offset += len(data)
    manifest = {"format": FORMAT, "version": VERSION, "meta": meta or {}, "state": packed_state, "tensors": entries}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=False))
    return path


def load_checkpoint(path):
    """Returns ``(tensors, meta, state)``."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no manifest.json") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} checkpoint")
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    blob = (path / "tensors.bin").read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        arr = np.frombuffer(raw, dtype=_NP[e["dtype"]]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(np.dtype(e["dtype"]), copy=True))
    state = _unpack(manifest["state"], tensors) if manifest.get("state") is not None else None
    plain = {k: v for k, v in tensors.items() if not k.startswith("state/")}
    return plain, manifest["meta"], state


def module_tensors(prefix: str, module: torch.nn.Module) -> dict:
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_module(prefix: str, module: torch.nn.Module, tensors: dict) -> None:
    sub = {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + "/")}
    if not sub:
        raise CheckpointError(f"checkpoint has no tensors for {prefix!r}")
    module.load_state_dict(sub)
