"""Plain-text table format shared by every exported artifact.

A file starts with ``#``-prefixed metadata lines of the form
``# key,value,value,...``, followed by a CSV header row and data rows. Floats
are written with Python's shortest round-trip representation, so reading a
file back reproduces every value bit for bit.
"""

import csv
import io
import os
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["fmt", "write_table", "read_table"]


def fmt(x):
    """Shortest decimal string that parses back to the same float."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_table(path, meta, columns, rows):
    """Write metadata, a header and rows to ``path``.

    ``meta`` is a sequence of ``(key, values)`` pairs; ``rows`` an iterable of
    sequences. Rows may be longer than ``columns`` (trailing vector data).
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for key, values in meta:
        if isinstance(values, (str, int, float, np.floating, np.integer)):
            values = [values]
        buf.write("# ")
        writer.writerow([key] + [fmt(v) for v in values])
    writer.writerow(list(columns))
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    path = Path(path)
    try:
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_table(path):
    """Read a file written by :func:`write_table`.

    Returns ``(meta, columns, rows)`` with ``meta`` a list of ``(key, [str])``
    pairs and rows as lists of strings.
    """
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"no such file: {path}")
    meta, rows, columns = [], [], None
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                rec = next(csv.reader([line[2:].rstrip("\n")]))
                meta.append((rec[0], rec[1:]))
            elif columns is None:
                columns = next(csv.reader([line.rstrip("\n")]))
            elif line.strip():
                rows.append(next(csv.reader([line.rstrip("\n")])))
    if columns is None:
        raise InvalidArgumentError(f"{path} has no header row")
    return meta, columns, rows


def meta_lookup(meta, key, many=False):
    found = [v for k, v in meta if k == key]
    if not found:
        raise InvalidArgumentError(f"missing metadata entry {key!r}")
    return found if many else found[0]


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
