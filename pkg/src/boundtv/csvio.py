"""Plain CSV output: header row, comma separators, LF endings, 17 digits."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_vector(path, coords, values, header=("x", "value")) -> None:
    write_rows(path, header, zip(coords, values))


def read_vector(path):
    """Read a two-column CSV written by :func:`write_vector`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def write_history(path, history) -> None:
    from .solver import IterationRecord

    cols = IterationRecord.CSV_COLUMNS
    write_rows(path, cols, ([getattr(r, c) for c in cols] for r in history))


def write_snapshots(path, coords, snapshots) -> None:
    """Long-format model iterates: one row per (iteration, cell)."""
    rows = ((k, i, x, v) for k, m in snapshots for i, (x, v) in enumerate(zip(coords, m)))
    write_rows(path, ("k", "index", "x", "value"), rows)
