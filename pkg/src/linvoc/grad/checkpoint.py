"""Named-parameter container: a JSON manifest next to a raw float32 payload.

``<stem>.json`` holds ``{"entries": [{"name", "shape", "offset"}, ...], "meta": {...}}``
where ``offset`` is a byte offset into ``<stem>.bin``, a contiguous little-endian
float32 buffer.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping

import numpy as np

_LE_F32 = np.dtype("<f4")


def _paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".bin")


def save_arrays(stem, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> Path:
    manifest_path, payload_path = _paths(stem)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    tmp_bin = payload_path.with_name(payload_path.name + ".tmp")
    with open(tmp_bin, "wb") as fh:
        for name in sorted(arrays):
            # asarray keeps 0-d shapes (ascontiguousarray promotes them to 1-d)
            arr = np.asarray(arrays[name], dtype=_LE_F32)
            fh.write(arr.tobytes(order="C"))
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    tmp_json = manifest_path.with_name(manifest_path.name + ".tmp")
    tmp_json.write_text(json.dumps({"entries": entries, "meta": meta or {}}, indent=1, sort_keys=True))
    os.replace(tmp_bin, payload_path)
    os.replace(tmp_json, manifest_path)
    return manifest_path


def load_arrays(stem) -> tuple[dict[str, np.ndarray], dict]:
    manifest_path, payload_path = _paths(stem)
    manifest = json.loads(manifest_path.read_text())
    payload = payload_path.read_bytes()
    out = {}
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 4
        if end > len(payload):
            raise ValueError(f"checkpoint payload truncated at {entry['name']}")
        out[entry["name"]] = np.frombuffer(payload[start:end], dtype=_LE_F32).reshape(shape).copy()
    return out, manifest.get("meta", {})
