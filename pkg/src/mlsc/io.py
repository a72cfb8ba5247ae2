"""CSV/JSON file formats shared by the CLI subcommands.

Matrices are UTF-8 CSV, one row per line, ``%.17g`` floats.  A vector is
stored as a single column.  A model directory holds ``D1.csv .. Dk.csv`` and
``manifest.json`` with the dimensions in layer order.  Index sets written
to JSON are 1-based.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import MultiLayerModel

MANIFEST = "manifest.json"


def write_matrix(path, A) -> None:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, A, fmt="%.17g", delimiter=",", encoding="utf-8")


def read_matrix(path) -> np.ndarray:
    A = np.loadtxt(path, delimiter=",", ndmin=2, encoding="utf-8")
    return A


def write_vector(path, v) -> None:
    write_matrix(path, np.asarray(v, dtype=float).reshape(-1, 1))


def read_vector(path) -> np.ndarray:
    return read_matrix(path).ravel()


def save_model(model: MultiLayerModel, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, D in enumerate(model.layers, start=1):
        write_matrix(d / f"D{i}.csv", D)
    manifest = {"layers": model.depth, "dims": list(model.dims)}
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return d


def load_model(directory) -> MultiLayerModel:
    d = Path(directory)
    manifest = json.loads((d / MANIFEST).read_text(encoding="utf-8"))
    k = int(manifest["layers"])
    layers = [read_matrix(d / f"D{i}.csv") for i in range(1, k + 1)]
    model = MultiLayerModel(tuple(layers))
    if list(model.dims) != list(manifest["dims"]):
        raise ValueError(f"manifest dims {manifest['dims']} do not match matrices {model.dims}")
    return model


def to_one_based(idx) -> list:
    return [int(i) + 1 for i in np.asarray(idx, dtype=int).ravel()]


def from_one_based(idx) -> np.ndarray:
    arr = np.asarray(list(idx), dtype=int) - 1
    if arr.size and arr.min() < 0:
        raise ValueError("1-based indices must be >= 1")
    return arr


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")
