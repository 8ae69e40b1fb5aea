"""On-disk formats for weight and kernel matrices.

Binary layout (all little-endian)::

    magic    8 bytes   b"RELUFIM\\0"
    version  u32
    kind     u32       0 = weights (d x p), 1 = kernel (p x p)
    rows     u64
    cols     u64
    seed     u64       2**64 - 1 when unknown
    scale    f64       NaN when not applicable
    body     rows*cols float64, row-major

Each binary file gets a JSON sidecar (``<file>.json``) with sorted keys and
no timestamps, so repeating a run reproduces both files byte for byte.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import DomainError
from .kernel import KernelMatrix
from .weights import WeightMatrix

MAGIC = b"RELUFIM\0"
VERSION = 1
KIND_WEIGHTS, KIND_KERNEL = 0, 1
_HEADER = struct.Struct("<8sIIQQQd")
_NO_SEED = 2**64 - 1


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write(path, kind: int, values: np.ndarray, seed, scale: float, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(values, dtype="<f8")
    header = _HEADER.pack(MAGIC, VERSION, kind, values.shape[0], values.shape[1],
                          _NO_SEED if seed is None else int(seed), scale)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes(order="C"))
    dump_json(meta, sidecar_path(path))
    return path


def _read(path, kind: int):
    path = Path(path)
    if not path.exists():
        raise DomainError(f"no such file: {path}")
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise DomainError(f"{path} is too short to be a matrix file")
        magic, version, got_kind, rows, cols, seed, scale = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise DomainError(f"{path} is not a matrix file (bad magic)")
        if version != VERSION:
            raise DomainError(f"{path} has unsupported format version {version}")
        if got_kind != kind:
            want = "weights" if kind == KIND_WEIGHTS else "kernel"
            raise DomainError(f"{path} does not hold a {want} matrix")
        body = np.frombuffer(fh.read(), dtype="<f8")
    if body.size != rows * cols:
        raise DomainError(f"{path} is truncated: expected {rows * cols} values, found {body.size}")
    seed = None if seed == _NO_SEED else seed
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    return body.reshape(rows, cols).astype(np.float64), seed, scale, meta


def save_weights(W: WeightMatrix, path) -> Path:
    meta = {"kind": "weights", "d": W.d, "p": W.p, "seed": W.seed, "scale": W.scale,
            "format_version": VERSION}
    scale = float("nan") if W.scale is None else float(W.scale)
    return _write(path, KIND_WEIGHTS, W.entries, W.seed, scale, meta)


def load_weights(path) -> WeightMatrix:
    values, seed, scale, _ = _read(path, KIND_WEIGHTS)
    return WeightMatrix(values, seed=seed, scale=None if np.isnan(scale) else scale)


def save_kernel(K: KernelMatrix, path, extra: dict | None = None) -> Path:
    meta = {"kind": "kernel", "format_version": VERSION, **K.sidecar(), **(extra or {})}
    return _write(path, KIND_KERNEL, K.values, K.seed, float("nan"), meta)


def load_kernel(path) -> KernelMatrix:
    values, seed, _, meta = _read(path, KIND_KERNEL)
    reserved = {"kind", "format_version", "provenance", "d", "p", "seed"}
    params = {k: v for k, v in meta.items() if k not in reserved}
    return KernelMatrix(values, meta.get("provenance", "closed_form"), params, d=meta.get("d"), seed=seed)


def matrix_to_csv(values: np.ndarray) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(values):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def default_output_dir() -> Path:
    return Path(os.environ.get("RELU_FIM_OUTPUT", "relu_fim_out"))
