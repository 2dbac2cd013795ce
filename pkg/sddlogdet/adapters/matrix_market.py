from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from sddlogdet.core.errors import AsymmetricInput, ParseError
from sddlogdet.core.sparse import SymmetricSparse

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_FIELDS = {"real", "double", "integer"}
_SYMMETRIES = {"symmetric", "general"}


def _parse_header(line: str) -> str:
    tokens = line.strip().lower().split()
    if len(tokens) != 5 or tokens[0] != "%%matrixmarket":
        raise ParseError("expected '%%MatrixMarket matrix coordinate <field> <symmetry>'", line=1)
    _, obj, fmt, field, symmetry = tokens
    if obj != "matrix" or fmt != "coordinate":
        raise ParseError(f"unsupported object/format {obj} {fmt}", line=1)
    if field not in _FIELDS:
        raise ParseError(f"unsupported field {field!r}", line=1)
    if symmetry not in _SYMMETRIES:
        raise ParseError(f"unsupported symmetry {symmetry!r}", line=1)
    return symmetry


def read_matrix_market(path: PathLike) -> SymmetricSparse:
    """Read a coordinate real symmetric (or symmetric-content general) file.

    General files must list both halves with identical values; only the
    lower triangle is kept.
    """
    target = Path(path)
    with target.open("r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    symmetry = _parse_header(lines[0])

    size_line = None
    entries: List[Tuple[int, int, float]] = []
    expected = 0
    n = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if size_line is None:
            if len(parts) != 3:
                raise ParseError("size line must be 'rows cols entries'", line=lineno)
            try:
                rows, cols, expected = (int(p) for p in parts)
            except ValueError as exc:
                raise ParseError(f"non-integer size line {text!r}", line=lineno) from exc
            if rows != cols:
                raise ParseError(f"matrix is {rows}x{cols}, not square", line=lineno)
            if rows < 0 or expected < 0:
                raise ParseError("negative size", line=lineno)
            n = rows
            size_line = lineno
            continue
        if len(parts) != 3:
            raise ParseError(f"entry must be 'row col value', got {text!r}", line=lineno)
        try:
            i, j, value = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ParseError(f"malformed entry {text!r}", line=lineno) from exc
        if not (1 <= i <= n and 1 <= j <= n):
            raise ParseError(f"index ({i},{j}) outside a {n}x{n} matrix", line=lineno)
        if not np.isfinite(value):
            raise ParseError(f"non-finite value {parts[2]!r}", line=lineno)
        entries.append((i - 1, j - 1, value))

    if size_line is None:
        raise ParseError("missing size line", line=len(lines))
    if len(entries) != expected:
        raise ParseError(f"expected {expected} entries, found {len(entries)}", line=len(lines))

    if symmetry == "general":
        table = {}
        for i, j, value in entries:
            table[(i, j)] = table.get((i, j), 0.0) + value
        for (i, j), value in table.items():
            if i != j and table.get((j, i)) != value:
                raise AsymmetricInput(f"entry ({i + 1},{j + 1})={value!r} has no matching ({j + 1},{i + 1})")
        entries = [(i, j, v) for (i, j), v in table.items() if i >= j]

    if entries:
        r, c, v = zip(*entries)
    else:
        r, c, v = (), (), ()
    matrix = SymmetricSparse.from_arrays(n, r, c, v)
    logger.debug("Read %s: n=%d stored=%d (%s)", target, n, matrix.nnz, symmetry)
    return matrix


def write_matrix_market(A: SymmetricSparse, path: PathLike, comment: str = "") -> Path:
    """Write the lower triangle with 17 significant digits, 1-based."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    order = np.lexsort((A.rows, A.cols))
    lines = ["%%MatrixMarket matrix coordinate real symmetric"]
    for text in comment.splitlines():
        lines.append(f"% {text}")
    lines.append(f"{A.n} {A.n} {A.nnz}")
    for k in order:
        # stored (row <= col) written as lower-triangle (col, row)
        lines.append(f"{int(A.cols[k]) + 1} {int(A.rows[k]) + 1} {A.values[k]:.17g}")
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug("Wrote %s: n=%d stored=%d", target, A.n, A.nnz)
    return target


__all__ = ["read_matrix_market", "write_matrix_market"]
