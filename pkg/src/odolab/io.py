"""Result files: '#'-commented CSV tables and DSOD binary field snapshots.

DSOD layout (little-endian, 32-byte header, then ``count`` float64 values
in row-major site order)::

    offset  size  field
    0       4     magic b"DSOD"
    4       4     uint32 format version (1)
    8       4     uint32 d
    12      4     uint32 n
    16      8     uint64 count (= n^d)
    24      8     reserved, zero
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["DSOD_MAGIC", "DSOD_VERSION", "write_dsod", "read_dsod", "Table"]

DSOD_MAGIC = b"DSOD"
DSOD_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ8s")
assert _HEADER.size == 32


def write_dsod(path, values: np.ndarray, d: int, n: int) -> None:
    values = np.asarray(values, dtype="<f8")
    if values.size != n**d:
        raise ValueError(f"{values.size} values do not fill a {n}^{d} lattice")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DSOD_MAGIC, DSOD_VERSION, d, n, values.size, b"\0" * 8))
        fh.write(np.ascontiguousarray(values).reshape(-1).tobytes())


def read_dsod(path) -> tuple[np.ndarray, int, int]:
    """Return ``(values shaped (n,)*d, d, n)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("file too short for a DSOD header")
    magic, version, d, n, count, _ = _HEADER.unpack_from(data)
    if magic != DSOD_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != DSOD_VERSION:
        raise ValueError(f"unsupported DSOD version {version}")
    if count != n**d or len(data) != _HEADER.size + 8 * count:
        raise ValueError("DSOD payload size does not match header")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return values.reshape((n,) * d), d, n


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Table:
    """CSV table with '#'-prefixed metadata lines, rendered deterministically."""

    def __init__(self, columns, meta: dict):
        self.columns = list(columns)
        self.meta = meta
        self.rows: list[list] = []
        self.truncated = False

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(self.columns)}")
        self.rows.append(list(row))

    def render(self) -> str:
        buf = io.StringIO()
        for key, value in self.meta.items():
            if isinstance(value, (dict, list)):
                value = json.dumps(value, sort_keys=True)
            buf.write(f"# {key} = {value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        if self.truncated:
            buf.write("# TRUNCATED\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.render())


def read_table(path) -> tuple[dict, list[str], list[list[str]]]:
    """Parse a file written by :class:`Table` into ``(meta, columns, rows)``."""
    meta: dict = {}
    lines = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            key, sep, value = line[2:].partition(" = ")
            if sep:
                meta[key] = value
            else:
                meta[line[2:]] = True
        else:
            lines.append(line)
    reader = list(csv.reader(lines))
    return meta, reader[0], reader[1:]
