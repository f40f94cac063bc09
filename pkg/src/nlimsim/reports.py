"""Deterministic artifact writing: CSV/JSON emitters, atomic file replacement
and a content-hash manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import tempfile
from pathlib import Path

import numpy as np

from . import __version__


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header, rows, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows, comments=()) -> Path:
    return atomic_write(path, csv_text(header, rows, comments))


def write_json(path, doc) -> Path:
    return atomic_write(path, json.dumps(doc, sort_keys=True, indent=1, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def versions() -> dict:
    import scipy

    return {
        "nlimsim": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


class Manifest:
    """Collects emitted files; written last so it always lists everything."""

    def __init__(self, out_dir, command: str, seed, args: dict, inputs: dict | None = None):
        self.out_dir = Path(out_dir)
        self.doc = {
            "command": command,
            "seed": seed,
            "args": args,
            "inputs": dict(inputs or {}),
            "versions": versions(),
            "outputs": {},
        }

    def add(self, path) -> Path:
        path = Path(path)
        self.doc["outputs"][path.relative_to(self.out_dir).as_posix()] = sha256_file(path)
        return path

    def write(self) -> Path:
        return write_json(self.out_dir / f"manifest_{self.doc['command']}.json", self.doc)


# Plot-data schemas; the README documents the same columns.
PLOTDATA_SCHEMAS = {
    "inl": ("column", "code", "ideal", "measured", "inl"),
    "error_decomposition": ("bits", "cells", "quant_rmse", "mismatch_mean", "mismatch_std"),
    "granularity": ("granularity", "cells", "quant_rmse", "mismatch_mean", "mismatch_std"),
    "calibration": ("column", "pre_rmse", "post_rmse", "offset_steps"),
    "transfer": ("v_mac", "mac_units", "code", "oracle_code"),
}


def emit_plotdata(kind: str, rows, path, comments=()) -> Path:
    """Write a plot series with its fixed column schema."""
    if kind not in PLOTDATA_SCHEMAS:
        raise KeyError(f"unknown plot-data kind {kind!r}")
    header = PLOTDATA_SCHEMAS[kind]
    out = []
    for r in rows:
        out.append([r[h] for h in header] if isinstance(r, dict) else list(r))
    return write_csv(path, header, out, comments)
