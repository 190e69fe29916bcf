"""Named-parameter checkpoint archive with a JSON architecture sidecar.

Binary layout (all little-endian)::

    b"TSBNCKPT"  uint32 version  uint32 n_entries
    per entry:   uint16 name_len, name (utf-8), uint8 ndim, uint32 dims[ndim],
                 float32 data[prod(dims)]

Loading rebuilds the architecture from the sidecar and refuses any archive
whose names or shapes differ from it.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, IoError
from .nets import ArchConfig, ModelBundle, build_baseline_models, build_models

MAGIC = b"TSBNCKPT"
VERSION = 1


def encode_parameters(named: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, value in named.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_parameters(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a tsbn checkpoint (bad magic)")
    pos = 8
    try:
        version, count = struct.unpack_from("<II", view, pos)
        pos += 8
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        named = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            nbytes = 4 * size
            if pos + nbytes > len(view):
                raise CheckpointError(f"truncated data for {name!r}")
            named[name] = np.frombuffer(view[pos:pos + nbytes], dtype="<f4").reshape(shape).copy()
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after the last entry")
    return named


def save_checkpoint(bundle: ModelBundle, path, arch_path=None, method: str | None = None) -> tuple[Path, Path]:
    path = Path(path)
    arch_path = Path(arch_path) if arch_path else path.with_name("arch.json")
    named = {k: v.detach().cpu().numpy() for k, v in bundle.named_parameters()}
    path.write_bytes(encode_parameters(named))
    meta = bundle.arch_dict()
    meta["method"] = method or ("tsbn" if bundle.restoration is not None else bundle.variant)
    arch_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, arch_path


def _rebuild(meta: dict) -> ModelBundle:
    arch = ArchConfig.from_dict(meta["arch"])
    parts = set(meta.get("parts", []))
    if meta.get("method", "tsbn") == "tsbn":
        bundle = build_models(meta["variant"], arch)
    else:
        bundle = build_baseline_models(meta["method"], arch)
        if "aux_decoder" not in parts:
            bundle.aux_decoder = None
    return bundle


def load_checkpoint(path, arch_path=None) -> ModelBundle:
    path = Path(path)
    arch_path = Path(arch_path) if arch_path else path.with_name("arch.json")
    try:
        blob = path.read_bytes()
        meta = json.loads(arch_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise IoError(str(exc)) from exc
    bundle = _rebuild(meta)
    stored = decode_parameters(blob)
    expected = dict(bundle.named_parameters())
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
    with torch.no_grad():
        for name, param in expected.items():
            value = stored[name]
            if tuple(value.shape) != tuple(param.shape):
                raise CheckpointError(f"{name}: stored shape {value.shape} != model shape {tuple(param.shape)}")
            param.copy_(torch.from_numpy(value))
    return bundle
