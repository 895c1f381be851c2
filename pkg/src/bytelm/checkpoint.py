"""Single-file model checkpoints.

Layout: one UTF-8 JSON line holding {format_version, model_config,
params}, a newline, then raw little-endian float32 blobs packed in
manifest order. Each manifest entry records name, shape, dtype, and
byte_offset relative to the start of the blob region.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .models import Model, ModelConfig, build_model

FORMAT_VERSION = 1
_DTYPE = "float32"
_WIRE = np.dtype("<f4")


def save_checkpoint(path, model: Model) -> None:
    manifest = []
    offset = 0
    blobs = []
    for name, p in model.params.items():
        blob = np.ascontiguousarray(p.data.astype(_WIRE, copy=False)).tobytes()
        manifest.append(
            {"name": name, "shape": list(p.data.shape), "dtype": _DTYPE, "byte_offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "params": manifest,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Model:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"corrupt checkpoint {path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"corrupt checkpoint {path}: {e}")
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"unsupported checkpoint format_version {header.get('format_version')!r}"
        )
    cfg = ModelConfig.from_dict(header["model_config"])
    model = build_model(cfg, rng=None)
    body = raw[nl + 1 :]
    seen = set()
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if entry["dtype"] != _DTYPE:
            raise DataError(f"unsupported dtype {entry['dtype']!r} for {name}")
        if name not in model.params:
            raise DataError(f"checkpoint parameter {name!r} unknown to kind {cfg.kind}")
        target = model.params[name]
        if tuple(target.data.shape) != shape:
            raise DataError(
                f"shape mismatch for {name}: checkpoint {shape}, model {target.data.shape}"
            )
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["byte_offset"]
        end = start + n * _WIRE.itemsize
        if end > len(body):
            raise DataError(f"truncated checkpoint: {name} ends at {end}, have {len(body)}")
        target.data[...] = np.frombuffer(body[start:end], dtype=_WIRE).reshape(shape)
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise DataError(f"checkpoint missing parameters: {sorted(missing)}")
    return model
