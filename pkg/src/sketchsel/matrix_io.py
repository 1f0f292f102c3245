"""CSV matrix files and atomic output writes.

File layout: optional ``#`` comment lines, then ``rows,cols``, then one
comma-separated row per line.  Values use 17 significant digits, which
round-trips every float64 exactly.
"""
import contextlib
import os
import tempfile

import numpy as np

from .errors import ModelError
from .linalg import as_matrix


def format_value(x):
    return "%.17g" % x


@contextlib.contextmanager
def atomic_write(path, mode="w"):
    """Write to a temp file in the target directory, rename on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def matrix_to_text(a, header=None):
    a = as_matrix(a)
    lines = []
    if header:
        lines.extend("# " + line for line in header.splitlines())
    lines.append(f"{a.shape[0]},{a.shape[1]}")
    for row in a:
        lines.append(",".join(format_value(v) for v in row))
    return "\n".join(lines) + "\n"


def write_matrix(path, a, header=None):
    text = matrix_to_text(a, header)
    with atomic_write(path) as fh:
        fh.write(text)


def read_matrix(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ModelError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(v) for v in lines[0].split(","))
    except ValueError as exc:
        raise ModelError(f"{path}: first line must be 'rows,cols'") from exc
    body = lines[1:]
    if len(body) != rows:
        raise ModelError(f"{path}: header says {rows} rows, found {len(body)}")
    if rows == 0:
        return np.zeros((0, cols))
    data = np.array([[float(v) for v in ln.split(",")] for ln in body], dtype=np.float64)
    if data.shape != (rows, cols):
        raise ModelError(f"{path}: expected {rows}x{cols} values, found {data.shape}")
    return as_matrix(data, path)
