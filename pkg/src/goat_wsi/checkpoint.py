"""Single-file checkpoints: one JSON header line, then raw parameter bytes.

Layout: a compact JSON object (format tag, config, extras, and a parameter
manifest of name/shape/offset/size entries) terminated by a newline,
followed by the concatenation of every parameter as little-endian float64
in manifest order. Offsets are relative to the first byte after the newline.
Writing is deterministic: same config + params -> same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import FormatError

FORMAT_TAG = "goat-checkpoint"
VERSION = 1


def save_checkpoint(path, config: ModelConfig, params: dict, extra: dict | None = None) -> Path:
    """Write config + named parameter arrays (+ small JSON-able extras)."""
    path = Path(path)
    manifest = []
    blobs = []
    offset = 0
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)),
                         "offset": offset, "size": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format": FORMAT_TAG,
        "version": VERSION,
        "config": config.to_dict(),
        "extra": extra or {},
        "manifest": manifest,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True).encode())
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path) -> tuple:
    """Read back (config, params dict, extra dict); verifies sizes and tag."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e}") from e
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"checkpoint {path}: no header line")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as e:
        raise FormatError(f"checkpoint {path}: bad header JSON: {e}") from e
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise FormatError(f"checkpoint {path}: missing format tag {FORMAT_TAG!r}")
    if header.get("version") != VERSION:
        raise FormatError(f"checkpoint {path}: unsupported version {header.get('version')}")
    body = raw[nl + 1:]
    params = {}
    total = 0
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        off, size = entry["offset"], entry["size"]
        want = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if size != want:
            raise FormatError(f"checkpoint {path}: parameter {entry['name']!r} "
                              f"declares {size} bytes, shape {shape} needs {want}")
        if off + size > len(body):
            raise FormatError(f"checkpoint {path}: parameter {entry['name']!r} "
                              f"overruns file body ({off}+{size} > {len(body)})")
        params[entry["name"]] = np.frombuffer(body, dtype="<f8", count=size // 8,
                                              offset=off).reshape(shape).copy()
        total = max(total, off + size)
    if total != len(body):
        raise FormatError(f"checkpoint {path}: {len(body) - total} trailing bytes")
    config = ModelConfig.from_dict(header["config"])
    return config, params, header.get("extra", {})
