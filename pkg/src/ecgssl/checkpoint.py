"""Versioned binary checkpoints.

Layout::

    8 bytes   magic b"ECGSSLCK"
    8 bytes   header length, little-endian uint64
    n bytes   UTF-8 JSON header (format version, architecture, config, tensor table)
    ...       raw little-endian tensor blocks, in table order
    32 bytes  SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from .models import backbone_family, build_from_architecture

MAGIC = b"ECGSSLCK"
FORMAT_VERSION = 1
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    architecture: dict[str, Any]
    state: dict[str, torch.Tensor]
    config: dict[str, Any] = field(default_factory=dict)
    optimizer: dict[str, Any] | None = None
    ema: dict[str, torch.Tensor] | None = None
    rng_state: dict[str, Any] | None = None
    extra: dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: nn.Module, config: dict | None = None, **kwargs) -> "Checkpoint":
        from .models import architecture

        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(architecture(model), state, dict(config or {}), **kwargs)

    @property
    def family(self) -> str:
        return backbone_family(self.architecture)

    def build(self, expect: str | None = None) -> nn.Module:
        """Rebuild the model; ``expect`` ("cpc" or "conv") rejects other families."""
        if expect is not None and self.family != expect:
            raise CheckpointError(
                f"checkpoint holds a {self.family!r} model ({self.architecture.get('kind')}), "
                f"but a {expect!r} model was requested"
            )
        model = build_from_architecture(self.architecture)
        missing, unexpected = model.load_state_dict(self.state, strict=False)
        if missing or unexpected:
            raise CheckpointError(f"state does not match architecture: missing={missing}, unexpected={unexpected}")
        return model


def _flatten(obj: Any, prefix: str, tensors: dict[str, torch.Tensor]) -> Any:
    """Move tensors out of a nested structure into ``tensors``; leave JSON-able placeholders."""
    if isinstance(obj, torch.Tensor):
        tensors[prefix] = obj
        return {"__tensor__": prefix}
    if isinstance(obj, dict):
        return {"__dict__": [[k, _flatten(v, f"{prefix}/{k}", tensors)] for k, v in obj.items()]}
    if isinstance(obj, tuple):
        return {"__tuple__": [_flatten(v, f"{prefix}/{i}", tensors) for i, v in enumerate(obj)]}
    if isinstance(obj, list):
        return [_flatten(v, f"{prefix}/{i}", tensors) for i, v in enumerate(obj)]
    return obj


def _unflatten(obj: Any, tensors: dict[str, torch.Tensor]) -> Any:
    if isinstance(obj, dict):
        if "__tensor__" in obj:
            return tensors[obj["__tensor__"]]
        if "__dict__" in obj:
            return {k: _unflatten(v, tensors) for k, v in obj["__dict__"]}
        if "__tuple__" in obj:
            return tuple(_unflatten(v, tensors) for v in obj["__tuple__"])
        return {k: _unflatten(v, tensors) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unflatten(v, tensors) for v in obj]
    return obj


def _to_bytes(t: torch.Tensor) -> tuple[str, bytes]:
    t = t.detach().cpu().contiguous()
    try:
        dtype = _DTYPES[t.dtype]
    except KeyError:
        raise CheckpointError(f"unsupported tensor dtype {t.dtype}") from None
    return dtype, t.numpy().astype(dtype, copy=False).tobytes()


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    """Write atomically: a temporary sibling file is renamed over ``path``."""
    tensors: dict[str, torch.Tensor] = {}
    layout = {
        "state": _flatten(ckpt.state, "state", tensors),
        "optimizer": _flatten(ckpt.optimizer, "optimizer", tensors),
        "ema": _flatten(ckpt.ema, "ema", tensors),
        "rng_state": _flatten(ckpt.rng_state, "rng_state", tensors),
        "extra": _flatten(ckpt.extra, "extra", tensors),
    }
    table, blobs, offset = [], [], 0
    for name, t in tensors.items():
        dtype, raw = _to_bytes(t)
        table.append({"name": name, "dtype": dtype, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": ckpt.format_version,
        "architecture": ckpt.architecture,
        "config": ckpt.config,
        "layout": layout,
        "tensors": table,
    }
    head = json.dumps(header).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(body)
        f.write(digest)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted file)")
    (head_len,) = struct.unpack("<Q", body[8:16])
    if 16 + head_len > len(body):
        raise CheckpointError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(body[16 : 16 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format_version {version} is not supported (expected {FORMAT_VERSION})")
    data = body[16 + head_len :]
    tensors: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(data):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of data")
        dtype = entry["dtype"]
        if dtype not in _TORCH_DTYPES:
            raise CheckpointError(f"{path}: unsupported dtype {dtype}")
        arr = np.frombuffer(data[start : start + n], dtype=dtype).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(arr)
    layout = header["layout"]
    return Checkpoint(
        architecture=header["architecture"],
        state=_unflatten(layout["state"], tensors),
        config=header["config"],
        optimizer=_unflatten(layout["optimizer"], tensors),
        ema=_unflatten(layout["ema"], tensors),
        rng_state=_unflatten(layout["rng_state"], tensors),
        extra=_unflatten(layout["extra"], tensors),
        format_version=version,
    )
