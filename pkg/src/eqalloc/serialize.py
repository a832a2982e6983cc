"""Versioned text container for model parameters.

A model file is one canonical JSON document (sorted keys, no spaces,
trailing newline) so that identical models produce identical bytes:

    {"format": "eqalloc-model", "version": 1, "layers": [...]}

Dense layer entry:
    {"kind": "dense", "activation": ..., "rows": R, "cols": C,
     "weights": [R*C floats, row-major], "bias": [R floats]}

Equivariant layer entry:
    {"kind": "equivariant", "activation": ..., "blocks": K,
     "rows": d_out, "cols": d_in, "u": [...], "v": [...], "bias": [...]}

Floats are serialized with Python's shortest round-trip repr, so loading
reproduces the exact parameter bits.
"""

from __future__ import annotations

import json

import numpy as np

from .equivariant import EquivariantLayer
from .nn import DenseLayer, Mlp

FORMAT = "eqalloc-model"
VERSION = 1


def _layer_to_dict(layer):
    if isinstance(layer, DenseLayer):
        return {
            "kind": "dense",
            "activation": layer.activation,
            "rows": layer.d_out,
            "cols": layer.d_in,
            "weights": layer.weights.reshape(-1).tolist(),
            "bias": layer.bias.tolist(),
        }
    if isinstance(layer, EquivariantLayer):
        return {
            "kind": "equivariant",
            "activation": layer.activation,
            "blocks": layer.blocks,
            "rows": layer.block_out,
            "cols": layer.block_in,
            "u": layer.u.reshape(-1).tolist(),
            "v": layer.v.reshape(-1).tolist(),
            "bias": layer.bias.tolist(),
        }
    raise TypeError(f"cannot serialize layer of type {type(layer).__name__}")


def _layer_from_dict(d):
    kind = d.get("kind")
    if kind == "dense":
        rows, cols = d["rows"], d["cols"]
        weights = np.asarray(d["weights"], dtype=float).reshape(rows, cols)
        return DenseLayer(weights, np.asarray(d["bias"], dtype=float), d["activation"])
    if kind == "equivariant":
        rows, cols = d["rows"], d["cols"]
        u = np.asarray(d["u"], dtype=float).reshape(rows, cols)
        v = np.asarray(d["v"], dtype=float).reshape(rows, cols)
        return EquivariantLayer(
            u, v, np.asarray(d["bias"], dtype=float), d["blocks"], d["activation"]
        )
    raise ValueError(f"unknown layer kind {kind!r}")


def model_to_dict(net):
    return {
        "format": FORMAT,
        "version": VERSION,
        "layers": [_layer_to_dict(layer) for layer in net.layers],
    }


def model_from_dict(d):
    if d.get("format") != FORMAT:
        raise ValueError(f"not a model container: format={d.get('format')!r}")
    if d.get("version") != VERSION:
        raise ValueError(f"unsupported container version {d.get('version')!r}")
    return Mlp([_layer_from_dict(entry) for entry in d["layers"]])


def dumps_canonical(obj):
    """Canonical JSON text: sorted keys, compact separators, one newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def save_model(net, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(model_to_dict(net)))


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
