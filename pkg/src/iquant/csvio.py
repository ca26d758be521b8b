"""Versioned, deterministic CSV output."""

from __future__ import annotations

import csv
import io
from pathlib import Path

CSV_HEADER = "# iquant-csv v1"


def fmt(value) -> str:
    """Render a cell; floats use 17 significant digits so they round-trip."""
    if isinstance(value, (bool, str)):
        return str(value)
    if isinstance(value, int) or (hasattr(value, "dtype") and value.dtype.kind in "iu"):
        return str(int(value))
    return format(float(value), ".17g")


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(columns, rows))
    return path


def read_csv(path):
    """Header and rows (as strings) of a file written by :func:`write_csv`."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing '{CSV_HEADER}' header")
    reader = csv.reader(lines[1:])
    columns = next(reader)
    return columns, [row for row in reader]
