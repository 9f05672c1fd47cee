"""Binary grid dumps and provenance-stamped CSV reports.

Grid layout (little-endian)::

    b"SRL1"            magic
    u32 ndim
    u32 * ndim         shape
    f64 R
    f64 gamma
    f64 * 2 * size     row-major interleaved (re, im)
"""
from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SRL1"
PROVENANCE = ("scenario", "seed", "gamma", "K", "R", "alpha", "mu", "grid")


def write_grid(path, values, R: float, gamma: float) -> None:
    """Dump a real or complex array in the shared binary format."""
    v = np.ascontiguousarray(values, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", v.ndim))
        fh.write(struct.pack(f"<{v.ndim}I", *v.shape))
        fh.write(struct.pack("<dd", float(R), float(gamma)))
        fh.write(v.astype("<c16").tobytes())


def read_grid(path):
    """Inverse of :func:`write_grid`; returns ``(values, R, gamma)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    off = 8 + 4 * ndim
    R, gamma = struct.unpack_from("<dd", data, off)
    off += 16
    n = int(np.prod(shape)) if ndim else 1
    vals = np.frombuffer(data, dtype="<c16", count=n, offset=off).reshape(shape)
    return vals.astype(np.complex128), R, gamma


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(rows, provenance: dict, columns=None) -> str:
    """Render rows as CSV with the provenance columns first.

    Parameters
    ----------
    rows : list of dict
    provenance : dict
        Values for ``scenario, seed, gamma, K, R, alpha, mu, grid``; a row may
        override any of them (e.g. its own ``R``).
    columns : list of str, optional
        Extra column order; defaults to first-seen order across rows.
    """
    missing = [k for k in PROVENANCE if k not in provenance]
    if missing:
        raise ValueError(f"missing provenance fields: {missing}")
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in PROVENANCE and k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(PROVENANCE) + list(columns))
    for r in rows:
        merged = {**provenance, **r}
        w.writerow([_fmt(merged.get(k, "")) for k in list(PROVENANCE) + list(columns)])
    return buf.getvalue()


def write_csv(path, rows, provenance: dict, columns=None) -> None:
    Path(path).write_text(csv_text(rows, provenance, columns))
