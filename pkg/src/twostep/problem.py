"""SDP data model, SDPA sparse-format I/O and residual evaluation.

Indices are 0-based everywhere in Python; the SDPA reader and writer
convert to and from the 1-based, block-local indices of the file format.
"""
from __future__ import annotations

import enum
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


class SdpaFormatError(ValueError):
    """Malformed SDPA input; ``lineno`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno else ""
        super().__init__(prefix + message)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


class SymSparseMatrix:
    """Symmetric matrix stored as its upper triangle ``(row <= col)``.

    Off-diagonal values are stored once and mirrored on access, so the
    inner product counts them twice.
    """

    __slots__ = ("dim", "rows", "cols", "vals")

    def __init__(self, dim: int, rows=(), cols=(), vals=()):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if dim < 0:
            raise ValueError("dimension must be nonnegative")
        if not (rows.size == cols.size == vals.size):
            raise ValueError("rows, cols and vals must have equal length")
        lo = np.minimum(rows, cols)
        hi = np.maximum(rows, cols)
        if lo.size and (lo.min() < 0 or hi.max() >= dim):
            raise ValueError(f"entry index outside 0..{dim - 1}")
        keep = vals != 0.0
        lo, hi, vals = lo[keep], hi[keep], vals[keep]
        order = np.lexsort((hi, lo))
        lo, hi, vals = lo[order], hi[order], vals[order]
        if lo.size > 1:
            dup = (lo[1:] == lo[:-1]) & (hi[1:] == hi[:-1])
            if dup.any():
                k = int(np.argmax(dup))
                raise ValueError(f"duplicate entry ({lo[k]}, {hi[k]})")
        for a in (lo, hi, vals):
            a.flags.writeable = False
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "rows", lo)
        object.__setattr__(self, "cols", hi)
        object.__setattr__(self, "vals", vals)

    def __setattr__(self, name, value):
        raise AttributeError("SymSparseMatrix is immutable")

    @classmethod
    def zeros(cls, dim: int) -> "SymSparseMatrix":
        return cls(dim)

    @classmethod
    def from_entries(cls, dim: int, entries: Mapping[tuple[int, int], float] | Iterable) -> "SymSparseMatrix":
        if isinstance(entries, Mapping):
            entries = [(i, j, v) for (i, j), v in entries.items()]
        entries = list(entries)
        if not entries:
            return cls(dim)
        r, c, v = zip(*entries)
        return cls(dim, r, c, v)

    @classmethod
    def from_dense(cls, A: np.ndarray, tol: float = 0.0) -> "SymSparseMatrix":
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        iu, ju = np.triu_indices(n)
        v = 0.5 * (A[iu, ju] + A[ju, iu])
        keep = np.abs(v) > tol
        return cls(n, iu[keep], ju[keep], v[keep])

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    def items(self):
        return zip(self.rows.tolist(), self.cols.tolist(), self.vals.tolist())

    def to_dict(self) -> dict[tuple[int, int], float]:
        return {(i, j): v for i, j, v in self.items()}

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.dim, self.dim))
        A[self.rows, self.cols] = self.vals
        A[self.cols, self.rows] = self.vals
        return A

    def inner_dense(self, X: np.ndarray) -> float:
        """``A . X`` for a dense symmetric ``X``."""
        w = np.where(self.rows == self.cols, 1.0, 2.0)
        return float(np.sum(w * self.vals * X[self.rows, self.cols]))

    def inner(self, other: "SymSparseMatrix") -> float:
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        b = other.to_dict()
        total = 0.0
        for i, j, v in self.items():
            w = b.get((i, j))
            if w is not None:
                total += v * w * (1.0 if i == j else 2.0)
        return total

    def scaled(self, alpha: float) -> "SymSparseMatrix":
        return SymSparseMatrix(self.dim, self.rows, self.cols, alpha * self.vals)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.vals))) if self.vals.size else 0.0

    def trace(self) -> float:
        return float(self.vals[self.rows == self.cols].sum())

    def __eq__(self, other):
        if not isinstance(other, SymSparseMatrix):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.vals, other.vals)
        )

    def __hash__(self):
        return hash((self.dim, self.rows.tobytes(), self.cols.tobytes(), self.vals.tobytes()))

    def __repr__(self):
        return f"SymSparseMatrix(dim={self.dim}, nnz={self.nnz})"


def block_offsets(blocks: Iterable[int]) -> np.ndarray:
    sizes = np.abs(np.asarray(list(blocks), dtype=np.int64))
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


@dataclass(frozen=True, eq=True)
class SdpProblem:
    """``min`` (or ``max``, per ``sense``) ``C . X`` s.t. ``A_i . X = b_i``, ``X`` PSD.

    ``blocks`` follows the SDPA convention: a negative size declares a
    diagonal (LP) block.
    """

    objective: SymSparseMatrix
    constraints: tuple[SymSparseMatrix, ...]
    rhs: tuple[float, ...]
    blocks: tuple[int, ...]
    sense: str = "min"
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "rhs", tuple(float(v) for v in self.rhs))
        object.__setattr__(self, "blocks", tuple(int(v) for v in self.blocks))
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if any(b == 0 for b in self.blocks):
            raise ValueError("block sizes must be nonzero")
        n = self.n
        if len(self.rhs) != len(self.constraints):
            raise ValueError("rhs length differs from constraint count")
        owner = self._block_of_index()
        for k, A in enumerate((self.objective, *self.constraints)):
            if A.dim != n:
                raise ValueError(f"matrix {k} has dim {A.dim}, expected {n}")
            if A.nnz == 0:
                continue
            br, bc = owner[A.rows], owner[A.cols]
            if np.any(br != bc):
                raise ValueError(f"matrix {k} has an entry across blocks")
            diag_block = np.asarray(self.blocks)[br] < 0
            if np.any(diag_block & (A.rows != A.cols)):
                raise ValueError(f"matrix {k} has an off-diagonal entry in a diagonal block")

    @property
    def n(self) -> int:
        return int(sum(abs(b) for b in self.blocks))

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def b(self) -> np.ndarray:
        return np.asarray(self.rhs, dtype=float)

    def offsets(self) -> np.ndarray:
        return block_offsets(self.blocks)

    def _block_of_index(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.blocks)), [abs(b) for b in self.blocks])

    def min_objective(self) -> SymSparseMatrix:
        """Objective of the equivalent minimisation problem."""
        return self.objective if self.sense == "min" else self.objective.scaled(-1.0)

    def replace(self, **changes) -> "SdpProblem":
        fields = dict(
            objective=self.objective,
            constraints=self.constraints,
            rhs=self.rhs,
            blocks=self.blocks,
            sense=self.sense,
            provenance=self.provenance,
        )
        fields.update(changes)
        return SdpProblem(**fields)


@dataclass
class SolverResult:
    status: Status
    X: np.ndarray
    y: np.ndarray
    S: np.ndarray
    pobj: float
    dobj: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    history: list = field(default_factory=list, repr=False)


def evaluate(problem: SdpProblem, X: np.ndarray) -> tuple[float, np.ndarray]:
    """Return ``(C . X, [A_i . X - b_i])``."""
    X = np.asarray(X, dtype=float)
    if X.shape != (problem.n, problem.n):
        raise ValueError(f"X has shape {X.shape}, expected ({problem.n}, {problem.n})")
    obj = problem.objective.inner_dense(X)
    res = np.array([A.inner_dense(X) for A in problem.constraints]) - problem.b
    return obj, res.reshape(problem.m)


# -- SDPA sparse format -------------------------------------------------------

_PUNCT = re.compile(r"[{}(),]")
_SENSE = re.compile(r"^[*\"]\s*sense\s*[:=]\s*(min|max)\s*$", re.I)
_PROV = re.compile(r"^[*\"]\s*provenance\s*[:=]\s?(.*)$", re.I)


def _number(tok: str, lineno: int, kind=float):
    try:
        if kind is int:
            v = float(tok)
            if v != int(v):
                raise ValueError
            return int(v)
        return float(tok.replace("D", "e").replace("d", "e"))
    except ValueError:
        raise SdpaFormatError(f"non-numeric token {tok!r}", lineno) from None


def parse_sdpa(text: str | io.TextIOBase, sense: str | None = None, provenance: str | None = None,
               default_sense: str = "min") -> SdpProblem:
    """Parse SDPA sparse text.

    The data ``(C, A_i, b)`` is stored verbatim. ``sense`` selects whether
    the problem is read as ``min C.X`` or ``max C.X``; when omitted, a
    ``* sense: ...`` comment written by :func:`write_sdpa` is honoured and
    ``default_sense`` is the fallback.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = text.splitlines()
    file_sense = None
    file_prov = ""
    pos = 0
    while pos < len(lines):
        s = lines[pos].strip()
        if s.startswith(('"', "*")):
            if (mt := _SENSE.match(s)) is not None:
                file_sense = mt.group(1).lower()
            elif (mt := _PROV.match(s)) is not None:
                file_prov = mt.group(1).strip()
            pos += 1
        elif not s:
            pos += 1
        else:
            break

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise SdpaFormatError("unexpected end of input", len(lines))
        pos += 1
        return pos, _PUNCT.sub(" ", lines[pos - 1]).split()

    ln, toks = next_line()
    m = _number(toks[0], ln, int)
    if m < 0:
        raise SdpaFormatError("negative constraint count", ln)
    ln, toks = next_line()
    nblocks = _number(toks[0], ln, int)
    if nblocks <= 0:
        raise SdpaFormatError("block count must be positive", ln)
    ln, toks = next_line()
    if len(toks) < nblocks:
        raise SdpaFormatError(f"expected {nblocks} block sizes, found {len(toks)}", ln)
    blocks = [_number(t, ln, int) for t in toks[:nblocks]]
    if any(b == 0 for b in blocks):
        raise SdpaFormatError("zero block size", ln)
    rhs: list[float] = []
    while len(rhs) < m:
        ln, toks = next_line()
        for t in toks:
            if len(rhs) == m:
                break
            rhs.append(_number(t, ln, float))

    offs = block_offsets(blocks)
    n = int(offs[-1])
    data: list[dict] = [dict() for _ in range(m + 1)]
    while pos < len(lines):
        raw = lines[pos]
        pos += 1
        s = raw.strip()
        if not s or s.startswith(('"', "*")):
            continue
        toks = _PUNCT.sub(" ", s).split()
        if len(toks) < 5:
            raise SdpaFormatError(f"entry line needs 5 tokens, found {len(toks)}", pos)
        matno = _number(toks[0], pos, int)
        blkno = _number(toks[1], pos, int)
        i = _number(toks[2], pos, int)
        j = _number(toks[3], pos, int)
        val = _number(toks[4], pos, float)
        if not 0 <= matno <= m:
            raise SdpaFormatError(f"matrix number {matno} outside 0..{m}", pos)
        if not 1 <= blkno <= nblocks:
            raise SdpaFormatError(f"block number {blkno} outside 1..{nblocks}", pos)
        size = abs(blocks[blkno - 1])
        if not (1 <= i <= size and 1 <= j <= size):
            raise SdpaFormatError(f"entry ({i}, {j}) outside block {blkno} of size {size}", pos)
        if blocks[blkno - 1] < 0 and i != j:
            raise SdpaFormatError(f"off-diagonal entry ({i}, {j}) in diagonal block {blkno}", pos)
        i, j = min(i, j), max(i, j)
        key = (int(offs[blkno - 1]) + i - 1, int(offs[blkno - 1]) + j - 1)
        if key in data[matno]:
            raise SdpaFormatError(f"duplicate entry ({matno}, {blkno}, {i}, {j})", pos)
        data[matno][key] = val

    mats = [SymSparseMatrix.from_entries(n, d) for d in data]
    return SdpProblem(
        objective=mats[0],
        constraints=tuple(mats[1:]),
        rhs=tuple(rhs),
        blocks=tuple(blocks),
        sense=sense or file_sense or default_sense,
        provenance=provenance if provenance is not None else file_prov,
    )


def read_sdpa(path, sense: str | None = None, default_sense: str = "min") -> SdpProblem:
    with open(path) as fh:
        return parse_sdpa(fh.read(), sense=sense, provenance=str(path), default_sense=default_sense)


def write_sdpa(problem: SdpProblem) -> str:
    """Serialise to SDPA sparse text with 17 significant digits."""
    out = io.StringIO()
    out.write(f"* sense: {problem.sense}\n")
    if problem.provenance:
        out.write(f"* provenance: {' '.join(problem.provenance.split())}\n")
    out.write(f"{problem.m}\n{len(problem.blocks)}\n")
    out.write(" ".join(str(b) for b in problem.blocks) + "\n")
    out.write(" ".join(f"{v:.17g}" for v in problem.rhs) + "\n")
    offs = problem.offsets()
    blk = problem._block_of_index()
    for matno, A in enumerate((problem.objective, *problem.constraints)):
        # SymSparseMatrix keeps entries sorted by (row, col); global order
        # within one block matches block-local order.
        bs = blk[A.rows]
        order = np.lexsort((A.cols, A.rows, bs))
        for k in order:
            b = int(bs[k])
            i = int(A.rows[k] - offs[b]) + 1
            j = int(A.cols[k] - offs[b]) + 1
            out.write(f"{matno} {b + 1} {i} {j} {A.vals[k]:.17g}\n")
    return out.getvalue()
