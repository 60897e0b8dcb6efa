"""Versioned JSON checkpoints for NSPDA and baseline models.

Tensors are stored as flat decimal arrays in row-major order together with
their shapes.  Floats are written with ``repr`` precision, so a reload is
bit-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import BaselineParams
from .exceptions import CheckpointError
from .model import ModelParams

FORMAT_VERSION = 1


def _flat(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "values": [float(v) for v in a.ravel()]}


def _unflat(d: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in d["shape"])
        values = np.asarray(d["values"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"tensor {name!r} is malformed") from exc
    if values.size != int(np.prod(shape)):
        raise CheckpointError(f"tensor {name!r} has {values.size} values for shape {shape}")
    return values.reshape(shape)


def to_document(params: ModelParams | BaselineParams) -> dict:
    meta = dict(params.metadata)
    if isinstance(params, ModelParams):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "nspda",
            "order": params.order,
            "J": params.J,
            "L": params.L,
            "seed": meta.get("seed"),
            "start": params.start,
            "tensors": {"W_s": _flat(params.W_s), "W_a": _flat(params.W_a), "W_o": _flat(params.W_o)},
            "biases": {"b_s": _flat(params.b_s), "b_a": _flat(params.b_a), "b_o": float(params.b_o)},
            "metadata": meta,
        }
    tensors = {k: _flat(v) for k, v in params.weights.items() if k not in ("b", "b_o")}
    return {
        "format_version": FORMAT_VERSION,
        "kind": params.kind,
        "order": params.kind,
        "J": params.hidden,
        "L": params.L,
        "seed": meta.get("seed"),
        "tensors": tensors,
        "biases": {"b": _flat(params.weights["b"]), "b_o": float(params.weights["b_o"])},
        "metadata": meta,
    }


def from_document(doc: dict) -> ModelParams | BaselineParams:
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint is not a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        kind, tensors, biases = doc["kind"], doc["tensors"], doc["biases"]
        J, L = int(doc["J"]), int(doc["L"])
        meta = dict(doc.get("metadata") or {})
        if kind == "nspda":
            return ModelParams(doc["order"], J, L, _unflat(tensors["W_s"], "W_s"), _unflat(tensors["W_a"], "W_a"),
                               _unflat(biases["b_s"], "b_s"), _unflat(biases["b_a"], "b_a"),
                               _unflat(tensors["W_o"], "W_o"), float(biases["b_o"]),
                               start=int(doc.get("start", 0)), metadata=meta)
        weights = {k: _unflat(v, k) for k, v in tensors.items()}
        weights["b"] = _unflat(biases["b"], "b")
        weights["b_o"] = np.asarray(float(biases["b_o"]))
        order = list(BaselineParams.shapes(kind, J, L))
        return BaselineParams(kind, J, L, {k: weights[k] for k in order}, meta)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint is malformed: {exc}") from exc


def save_checkpoint(params: ModelParams | BaselineParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_document(params), indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> ModelParams | BaselineParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg})") from exc
    return from_document(doc)
