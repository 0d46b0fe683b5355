"""Checkpoint files: a JSON manifest next to a little-endian parameter blob.

A checkpoint is a directory holding ``manifest.json`` and ``params.bin``.
Parameters are written in sorted name order; the manifest lists every name
with its shape so loading can validate the blob before touching the model.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..errors import FormatError
from .model import DualEncoder, ModelConfig

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"
_NP_DTYPES = {"float64": "<f8", "float32": "<f4"}


def _ordered(model: DualEncoder):
    return sorted(model.state_dict().items())


def params_blob(model: DualEncoder) -> bytes:
    dt = _NP_DTYPES[model.cfg.precision]
    return b"".join(t.detach().cpu().numpy().astype(dt).tobytes() for _, t in _ordered(model))


def params_hash(model: DualEncoder) -> str:
    return hashlib.sha256(params_blob(model)).hexdigest()


def save_checkpoint(model: DualEncoder, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = params_blob(model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "precision": model.cfg.precision,
        "byte_order": "little",
        "model_config": model.cfg.to_dict(),
        "params": [{"name": n, "shape": list(t.shape)} for n, t in _ordered(model)],
        "sha256": hashlib.sha256(blob).hexdigest(),
        "config": extra or {},
    }
    (path / BLOB).write_bytes(blob)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[DualEncoder, dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        blob = (path / BLOB).read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint at {path}: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('format_version')}")
    cfg_dict = dict(manifest["model_config"])
    cfg_dict["conv_channels"] = tuple(cfg_dict["conv_channels"])
    model = DualEncoder(ModelConfig(**cfg_dict))
    dt = np.dtype(_NP_DTYPES[manifest["precision"]])
    expected = {n: tuple(t.shape) for n, t in model.state_dict().items()}
    listed = {p["name"]: tuple(p["shape"]) for p in manifest["params"]}
    if listed != expected:
        raise FormatError("checkpoint parameter names or shapes do not match the model")
    total = sum(int(np.prod(s)) for s in listed.values()) * dt.itemsize
    if total != len(blob):
        raise FormatError(f"parameter blob has {len(blob)} bytes, manifest implies {total}")
    state, offset = {}, 0
    for p in manifest["params"]:
        n = int(np.prod(p["shape"]))
        arr = np.frombuffer(blob, dtype=dt, count=n, offset=offset).reshape(p["shape"])
        state[p["name"]] = torch.as_tensor(arr.copy(), dtype=model.cfg.dtype)
        offset += n * dt.itemsize
    model.load_state_dict(state)
    model.eval()
    return model, manifest
