"""Reading and writing tensors in the coordinate text format.

Format::

    %dims m1 m2 n [sym12]
    # comment
    i j k value

Indices in files are 1-based. Values are written with 17 significant digits
so a write-then-read round trip is exact.
"""

from __future__ import annotations

import io
import sys

import numpy as np

from .tensor import SparseTensor3


class CoordinateFormatError(ValueError):
    """Malformed coordinate input; ``line`` is the 1-based line number or None."""

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def _open_text(source, mode):
    if source == "-":
        return (sys.stdin if "r" in mode else sys.stdout), False
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        return open(source, mode, encoding="utf-8"), True
    return source, False


def read_coo(source):
    """Parse a coordinate file (path, ``"-"`` for stdin, or a text stream)."""
    fh, close = _open_text(source, "r")
    try:
        return parse_coo(fh)
    finally:
        if close:
            fh.close()


def parse_coo(lines):
    """Parse coordinate text from an iterable of lines or a string."""
    if isinstance(lines, str):
        lines = io.StringIO(lines)
    dims = None
    sym12 = False
    rows, vals, where = [], [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("%"):
            fields = line[1:].split()
            if not fields or fields[0] != "dims":
                raise CoordinateFormatError(f"unknown header {line!r}", lineno)
            if dims is not None:
                raise CoordinateFormatError("duplicate %dims header", lineno)
            if len(fields) not in (4, 5) or (len(fields) == 5 and fields[4] != "sym12"):
                raise CoordinateFormatError("expected '%dims m1 m2 n [sym12]'", lineno)
            try:
                dims = tuple(int(x) for x in fields[1:4])
            except ValueError:
                raise CoordinateFormatError("dims must be integers", lineno) from None
            if min(dims) < 1:
                raise CoordinateFormatError("dims must be positive", lineno)
            sym12 = len(fields) == 5
            continue
        if dims is None:
            raise CoordinateFormatError("entry before %dims header", lineno)
        fields = line.split()
        if len(fields) != 4:
            raise CoordinateFormatError(f"expected 'i j k value', got {line!r}", lineno)
        try:
            idx = [int(x) for x in fields[:3]]
            val = float(fields[3])
        except ValueError:
            raise CoordinateFormatError(f"cannot parse entry {line!r}", lineno) from None
        if not np.isfinite(val):
            raise CoordinateFormatError("value is not finite", lineno)
        for d, (x, bound) in enumerate(zip(idx, dims)):
            if not 1 <= x <= bound:
                raise CoordinateFormatError(
                    f"index {x} in mode {d + 1} outside 1..{bound}", lineno
                )
        rows.append(idx)
        vals.append(val)
        where.append(lineno)
    if dims is None:
        raise CoordinateFormatError("missing %dims header")
    subs = np.asarray(rows, dtype=np.int64).reshape(-1, 3) - 1
    try:
        return SparseTensor3(dims, subs, np.asarray(vals), sym12=sym12)
    except ValueError as exc:
        raise CoordinateFormatError(str(exc)) from None


def format_coo(A, comments=()):
    """Render a tensor as coordinate text."""
    out = io.StringIO()
    write_coo(A, out, comments=comments)
    return out.getvalue()


def write_coo(A, target, comments=()):
    """Write a tensor to a path, ``"-"`` (stdout) or a text stream."""
    fh, close = _open_text(target, "w")
    try:
        for c in comments:
            fh.write(f"# {c}\n")
        flag = " sym12" if A.sym12 else ""
        fh.write(f"%dims {A.dims[0]} {A.dims[1]} {A.dims[2]}{flag}\n")
        s = A.subs + 1
        fh.writelines(
            f"{i} {j} {k} {v!r}\n" for (i, j, k), v in zip(s.tolist(), A.vals.tolist())
        )
    finally:
        if close:
            fh.close()
