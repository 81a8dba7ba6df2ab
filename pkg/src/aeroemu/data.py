"""Dataset container and its two on-disk forms.

Binary layout (all little-endian)::

    b"AEMU1" | uint16 version | 16 ascii bytes schema hash | uint64 rows
    | uint32 meta length | meta JSON (utf-8) | rows x 60 float64, row-major

The 60 columns are the 32 inputs followed by the 28 outputs.  The CSV form
has an optional ``# {meta json}`` first line, then the canonical header and
one row per sample with round-trip exact decimal floats.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schema import N_INPUTS, N_OUTPUTS, SCHEMA, SchemaError

MAGIC = b"AEMU1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<5sH16sQI")
N_COLUMNS = N_INPUTS + N_OUTPUTS


class DataError(ValueError):
    """Malformed dataset file or content."""


@dataclass
class Dataset:
    """Samples in original physical units: inputs (n, 32) and targets (n, 28)."""

    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.x.shape[1] != N_INPUTS:
            raise DataError(f"inputs must be (n, {N_INPUTS}), got {self.x.shape}")
        if self.y.shape != (self.x.shape[0], N_OUTPUTS):
            raise DataError(f"targets must be (n, {N_OUTPUTS}), got {self.y.shape}")
        self.meta.setdefault("schema_hash", SCHEMA.hash)

    def __len__(self):
        return self.x.shape[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.x.tobytes())
        h.update(self.y.tobytes())
        return h.hexdigest()[:16]

    def subset(self, rows, **meta) -> "Dataset":
        return Dataset(self.x[rows], self.y[rows], {**self.meta, **meta})

    def split(self, val_fraction: float = 0.1):
        """Last `val_fraction` of the rows become the validation set."""
        if not 0 < val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        n_val = max(1, int(round(len(self) * val_fraction)))
        if n_val >= len(self):
            raise DataError("dataset too small to split")
        cut = len(self) - n_val
        return (self.subset(slice(0, cut), split="train"),
                self.subset(slice(cut, None), split="val"))


def save(ds: Dataset, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text(to_csv(ds))
    else:
        path.write_bytes(to_bytes(ds))


def load(path) -> Dataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return from_csv(path.read_text())
    return from_bytes(path.read_bytes())


def to_bytes(ds: Dataset) -> bytes:
    meta = json.dumps(ds.meta, sort_keys=True, separators=(",", ":")).encode()
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, SCHEMA.hash.encode("ascii"), len(ds), len(meta))
    payload = np.hstack([ds.x, ds.y]).astype("<f8").tobytes()
    return head + meta + payload


def from_bytes(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise DataError("file too short for dataset header")
    magic, version, shash, rows, mlen = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported dataset version {version}")
    SCHEMA.check_hash(shash.decode("ascii"), "dataset")
    start = _HEADER.size + mlen
    expected = rows * N_COLUMNS * 8
    if len(buf) - start != expected:
        raise DataError(f"payload is {len(buf) - start} bytes, header promises {expected}")
    meta = json.loads(buf[_HEADER.size:start].decode())
    table = np.frombuffer(buf, dtype="<f8", offset=start).reshape(rows, N_COLUMNS)
    return Dataset(table[:, :N_INPUTS].copy(), table[:, N_INPUTS:].copy(), meta)


def to_csv(ds: Dataset) -> str:
    out = io.StringIO()
    out.write("# " + json.dumps(ds.meta, sort_keys=True, separators=(",", ":")) + "\n")
    out.write(",".join(SCHEMA.csv_header) + "\n")
    for row in np.hstack([ds.x, ds.y]).tolist():
        out.write(",".join(map(repr, row)) + "\n")
    return out.getvalue()


def from_csv(text: str) -> Dataset:
    lines = text.splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        meta = json.loads(lines[0][1:].strip() or "{}")
        lines = lines[1:]
    if not lines:
        raise DataError("empty CSV")
    rows = list(csv.reader(lines))
    if rows[0] != SCHEMA.csv_header:
        raise SchemaError("CSV header does not match the canonical column list")
    try:
        table = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as e:
        raise DataError(f"non-numeric CSV value: {e}") from None
    if table.shape[0] == 0:
        table = table.reshape(0, N_COLUMNS)
    if table.shape[1] != N_COLUMNS:
        raise DataError(f"expected {N_COLUMNS} columns")
    if "schema_hash" in meta:
        SCHEMA.check_hash(meta["schema_hash"], "dataset")
    return Dataset(table[:, :N_INPUTS], table[:, N_INPUTS:], meta)
