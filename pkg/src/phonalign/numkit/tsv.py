"""Plain-text matrix serialization.

A single matrix is written one row per line, tab separated, with 17
significant digits so float64 values round-trip exactly.  Several named
matrices go into one file as blocks::

    ## <name> <rows> <cols>
    <row>
    ...
"""
from __future__ import annotations

import numpy as np


def format_row(values):
    return "\t".join(format(float(x), ".17g") for x in values)


def matrix_to_lines(m):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    return [format_row(row) for row in m]


def save_tsv(path, m):
    lines = matrix_to_lines(m)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def load_tsv(path):
    with open(path, encoding="utf-8") as f:
        rows = [line.rstrip("\n").split("\t") for line in f if line.strip()]
    if not rows:
        return np.zeros((0, 0))
    return np.array([[float(x) for x in row] for row in rows])


def write_blocks(f, arrays):
    """Write named arrays as TSV blocks; original shapes are recorded in the header."""
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype=np.float64)
        shape = "x".join(str(s) for s in a.shape) or "scalar"
        m = a if a.ndim == 2 else a.reshape(1, -1)
        f.write(f"## {name} {m.shape[0]} {m.shape[1]} {shape}\n")
        for line in matrix_to_lines(m) if m.size else []:
            f.write(line + "\n")


def read_blocks(lines):
    """Parse blocks written by :func:`write_blocks` from an iterator of lines."""
    out = {}
    lines = iter(lines)
    for line in lines:
        if not line.startswith("## "):
            continue
        _, name, rows, cols, shape = line.split()
        rows, cols = int(rows), int(cols)
        data = []
        if rows * cols:
            for _ in range(rows):
                data.append([float(x) for x in next(lines).rstrip("\n").split("\t")])
        m = np.array(data, dtype=np.float64).reshape(rows, cols)
        if shape == "scalar":
            out[name] = m.reshape(())
        else:
            out[name] = m.reshape(tuple(int(s) for s in shape.split("x")))
    return out
