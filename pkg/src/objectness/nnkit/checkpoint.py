"""JSON checkpoints: a map from array name to ``{"shape", "values"}``."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np

FORMAT = "objectness-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_arrays(arrays: Mapping[str, np.ndarray]) -> dict[str, Any]:
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"array {name!r} holds non-finite values")
    return {
        name: {"shape": list(arr.shape), "values": np.asarray(arr, dtype=np.float64).ravel().tolist()}
        for name, arr in sorted(arrays.items())
    }


def decode_arrays(payload: Mapping[str, Any]) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in payload.items():
        try:
            shape = tuple(int(d) for d in entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed array entry {name!r}: {exc}") from exc
        if values.ndim != 1 or values.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"array {name!r}: {values.size} values do not fill shape {shape}")
        if not np.all(np.isfinite(values)):
            raise CheckpointError(f"array {name!r} holds non-finite values")
        out[name] = values.reshape(shape)
    return out


def save_checkpoint(path: Union[str, Path], arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    doc = {"format": FORMAT, "version": VERSION, "meta": dict(meta), "arrays": encode_arrays(arrays)}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: Union[str, Path]) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not an {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    if not isinstance(doc.get("arrays"), dict) or not isinstance(doc.get("meta"), dict):
        raise CheckpointError(f"{path}: checkpoint is missing arrays or meta")
    return decode_arrays(doc["arrays"]), doc["meta"]
