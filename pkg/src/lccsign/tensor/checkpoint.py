"""Self-describing parameter container.

The file is a single JSON document::

    {"format": "lccsign-checkpoint", "version": 1, "meta": {...},
     "tensors": [{"name": ..., "shape": [...], "values": [...]}, ...]}

Values are row-major float64 written with shortest round-trip repr, so a
save/load cycle is exact and identical parameters give identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

FORMAT = "lccsign-checkpoint"
VERSION = 1


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    records = []
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        records.append({"name": name, "shape": list(arr.shape), "values": arr.reshape(-1).tolist()})
    doc = {"format": FORMAT, "version": VERSION, "meta": dict(meta or {}), "tensors": records}
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(
    path: str | Path, expected_shapes: Mapping[str, tuple[int, ...]] | None = None
) -> tuple[dict[str, np.ndarray], dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise DataError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')}")

    params = {}
    for rec in doc["tensors"]:
        shape = tuple(rec["shape"])
        values = np.asarray(rec["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise DataError(f"{path}: tensor {rec['name']} has {values.size} values for shape {shape}")
        params[rec["name"]] = values.reshape(shape)

    if expected_shapes is not None:
        problems = []
        for name, shape in sorted(expected_shapes.items()):
            if name not in params:
                problems.append(f"{name}: missing (expected {tuple(shape)})")
            elif params[name].shape != tuple(shape):
                problems.append(f"{name}: shape {params[name].shape} != expected {tuple(shape)}")
        for name in sorted(set(params) - set(expected_shapes)):
            problems.append(f"{name}: unexpected tensor")
        if problems:
            raise DataError(f"{path}: checkpoint does not match model:\n  " + "\n  ".join(problems))
    return params, doc.get("meta", {})
