"""Model checkpoint file format.

Layout (little-endian):

    bytes 0..7   magic b"FYCKPT1\\n"
    bytes 8..15  uint64 header length L
    L bytes      UTF-8 JSON header: format version, architecture sizes,
                 task labels, parameter names/shapes in serialization
                 order, normalization parameters, free-form meta
    rest         the parameter tensors as raw float64, row-major, in
                 header order

Saving and reloading is bit-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import NormParams
from .errors import DataValidationError
from .network import MtlArch, MtlModel

MAGIC = b"FYCKPT1\n"
FORMAT_VERSION = 1


def _norm_to_json(norm: dict[str, NormParams] | None):
    if norm is None:
        return None
    return {k: {"lo": v.lo.tolist(), "hi": v.hi.tolist()} for k, v in norm.items()}


def _norm_from_json(obj) -> dict[str, NormParams] | None:
    if obj is None:
        return None
    return {k: NormParams(np.array(v["lo"]), np.array(v["hi"])) for k, v in obj.items()}


def save_checkpoint(
    path: str | Path,
    model: MtlModel,
    norm: dict[str, NormParams] | None = None,
    meta: dict | None = None,
) -> None:
    names = model.param_names()
    header = {
        "format": "fieldyield-checkpoint",
        "version": FORMAT_VERSION,
        "arch": {
            "source_dims": [[s, d] for s, d in model.arch.source_dims],
            "extractor_width": model.arch.extractor_width,
            "shared_width": model.arch.shared_width,
            "head_widths": list(model.arch.head_widths),
            "dropout": model.arch.dropout,
        },
        "tasks": list(model.tasks),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "norm": _norm_to_json(norm),
        "meta": meta or {},
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[MtlModel, dict[str, NormParams] | None, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise DataValidationError(f"{path}: not a fieldyield checkpoint")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataValidationError(f"{path}: corrupt checkpoint header ({exc})")
    if header.get("version") != FORMAT_VERSION:
        raise DataValidationError(f"{path}: unsupported checkpoint version {header.get('version')}")
    arch = MtlArch(
        source_dims=tuple((s, int(d)) for s, d in header["arch"]["source_dims"]),
        extractor_width=int(header["arch"]["extractor_width"]),
        shared_width=int(header["arch"]["shared_width"]),
        head_widths=tuple(int(w) for w in header["arch"]["head_widths"]),
        dropout=float(header["arch"]["dropout"]),
    )
    tasks = tuple(int(t) for t in header["tasks"])
    params: dict[str, np.ndarray] = {}
    offset = start + hlen
    for entry in header["params"]:
        shape = tuple(int(x) for x in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise DataValidationError(f"{path}: truncated checkpoint")
        params[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise DataValidationError(f"{path}: {len(raw) - offset} trailing bytes")
    model = MtlModel(arch, tasks, params)
    expected = set(model.param_names())
    if expected != set(params):
        raise DataValidationError(f"{path}: parameter names do not match architecture")
    return model, _norm_from_json(header.get("norm")), header.get("meta", {})
