"""Clique-wise reformulation of an SDP over a chordal pattern, and recovery
of original-pattern entries from clique blocks."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .chordal import CliqueTree
from .problem import SdpProblem, SymSparseMatrix


class DecompositionError(ValueError):
    pass


class OverlapMismatchError(DecompositionError):
    def __init__(self, position, discrepancy, edge):
        self.position = position
        self.discrepancy = discrepancy
        self.edge = edge
        super().__init__(
            f"clique blocks disagree at original position {position} on tree edge "
            f"{edge}: discrepancy {discrepancy:.3e}"
        )


@dataclass(frozen=True)
class DecompositionMap:
    """Bookkeeping between the original matrix and the clique blocks.

    Clique blocks of size >= 2 become dense blocks, in clique order; all
    singleton cliques share one trailing diagonal block. ``offsets[s]`` is
    where clique ``s`` starts in the decomposed matrix.
    """

    n: int
    m: int
    cliques: tuple[tuple[int, ...], ...]
    tree_edges: tuple[tuple[int, int], ...]
    owner: dict
    overlap_list: tuple[tuple[int, int, int, int, int], ...]
    offsets: tuple[int, ...]
    blocks: tuple[int, ...]

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.cliques)

    @property
    def sigma(self) -> list[dict[int, int]]:
        return [{v: k for k, v in enumerate(c)} for c in self.cliques]

    @property
    def total_dim(self) -> int:
        return int(sum(abs(b) for b in self.blocks))

    def split(self, X: np.ndarray) -> list[np.ndarray]:
        """Per-clique dense blocks of a decomposed-space matrix."""
        out = []
        for c, off in zip(self.cliques, self.offsets):
            k = len(c)
            out.append(np.array(X[off:off + k, off:off + k]))
        return out

    def assemble(self, block_solution) -> np.ndarray:
        """Inverse of :meth:`split`: place clique blocks into one matrix."""
        X = np.zeros((self.total_dim, self.total_dim))
        for Xs, c, off in zip(block_solution, self.cliques, self.offsets):
            k = len(c)
            X[off:off + k, off:off + k] = np.asarray(Xs).reshape(k, k)
        return X

    def restrict(self, X: np.ndarray) -> list[np.ndarray]:
        """Clique-wise principal submatrices ``X[C_s, C_s]``."""
        return [np.array(X[np.ix_(c, c)]) for c in self.cliques]

    # -- sidecar ---------------------------------------------------------------
    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "twostep-decomposition-map",
                "version": 1,
                "indexing": "0-based",
                "n": self.n,
                "m": self.m,
                "cliques": [list(c) for c in self.cliques],
                "tree_edges": [list(e) for e in self.tree_edges],
                "offsets": list(self.offsets),
                "blocks": list(self.blocks),
                "owners": [[i, j, s] for (i, j), s in sorted(self.owner.items())],
                "overlap": [list(o) for o in self.overlap_list],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "DecompositionMap":
        d = json.loads(text)
        if d.get("format") != "twostep-decomposition-map":
            raise DecompositionError("not a decomposition map sidecar")
        return cls(
            n=d["n"],
            m=d["m"],
            cliques=tuple(tuple(c) for c in d["cliques"]),
            tree_edges=tuple(tuple(e) for e in d["tree_edges"]),
            owner={(i, j): s for i, j, s in d["owners"]},
            overlap_list=tuple(tuple(o) for o in d["overlap"]),
            offsets=tuple(d["offsets"]),
            blocks=tuple(d["blocks"]),
        )


@dataclass(frozen=True)
class DecomposedProblem:
    problem: SdpProblem
    map: DecompositionMap

    @property
    def overlap_count(self) -> int:
        return len(self.map.overlap_list)


def _layout(cliques) -> tuple[tuple[int, ...], tuple[int, ...]]:
    offsets = [0] * len(cliques)
    blocks = []
    pos = 0
    for s, c in enumerate(cliques):
        if len(c) > 1:
            offsets[s] = pos
            blocks.append(len(c))
            pos += len(c)
    singles = [s for s, c in enumerate(cliques) if len(c) == 1]
    for s in singles:
        offsets[s] = pos
        pos += 1
    if singles:
        blocks.append(-len(singles))
    return tuple(offsets), tuple(blocks)


def ownership(cliques) -> dict[tuple[int, int], int]:
    """Owner of each filled position: the lowest-index clique containing it."""
    owner: dict[tuple[int, int], int] = {}
    for s, c in enumerate(cliques):
        for a_idx, a in enumerate(c):
            for b in c[a_idx:]:
                owner.setdefault((a, b), s)
    return owner


def overlap_count_formula(m: int, tree: CliqueTree) -> int:
    return m + sum(len(q) * (len(q) + 1) // 2 for q in tree.separators())


def decompose(problem: SdpProblem, tree: CliqueTree) -> DecomposedProblem:
    cliques = tree.cliques
    covered = sorted({v for c in cliques for v in c})
    if covered != list(range(problem.n)):
        raise DecompositionError("cliques do not cover every vertex")
    owner = ownership(cliques)
    sigma = [{v: k for k, v in enumerate(c)} for c in cliques]
    offsets, blocks = _layout(cliques)
    N = int(sum(abs(b) for b in blocks))

    def split(A: SymSparseMatrix, label: str) -> SymSparseMatrix:
        rows, cols = [], []
        for i, j in zip(A.rows.tolist(), A.cols.tolist()):
            s = owner.get((i, j))
            if s is None:
                raise DecompositionError(f"{label} has a nonzero at ({i}, {j}) outside every clique")
            rows.append(offsets[s] + sigma[s][i])
            cols.append(offsets[s] + sigma[s][j])
        return SymSparseMatrix(N, rows, cols, A.vals)

    objective = split(problem.objective, "objective")
    constraints = [split(A, f"constraint {p}") for p, A in enumerate(problem.constraints)]
    rhs = list(problem.rhs)
    overlap = []
    for k, (s, t) in enumerate(tree.tree_edges):
        q = tree.separator(s, t)
        for a_idx, a in enumerate(q):
            for b in q[a_idx:]:
                w = 1.0 if a == b else 0.5
                rows = [offsets[s] + sigma[s][a], offsets[t] + sigma[t][a]]
                cols = [offsets[s] + sigma[s][b], offsets[t] + sigma[t][b]]
                constraints.append(SymSparseMatrix(N, rows, cols, [w, -w]))
                rhs.append(0.0)
                overlap.append((k, s, t, a, b))
    dmap = DecompositionMap(
        n=problem.n,
        m=problem.m,
        cliques=cliques,
        tree_edges=tuple(tree.tree_edges),
        owner=owner,
        overlap_list=tuple(overlap),
        offsets=offsets,
        blocks=blocks,
    )
    decomposed = SdpProblem(
        objective=objective,
        constraints=tuple(constraints),
        rhs=tuple(rhs),
        blocks=blocks,
        sense=problem.sense,
        provenance=(problem.provenance + " [clique decomposition]").strip(),
    )
    return DecomposedProblem(decomposed, dmap)


def recover_solution(block_solution, dmap: DecompositionMap, tol: float = 1e-6) -> SymSparseMatrix:
    """Original-pattern entries from clique blocks (owner clique wins)."""
    blocks = [np.asarray(X, dtype=float) for X in block_solution]
    if len(blocks) != len(dmap.cliques):
        raise DecompositionError(f"expected {len(dmap.cliques)} blocks, got {len(blocks)}")
    sigma = dmap.sigma
    for X, c in zip(blocks, dmap.cliques):
        if X.shape != (len(c), len(c)):
            raise DecompositionError(f"block shape {X.shape} does not match clique size {len(c)}")
    worst = (0.0, None, None)
    for k, s, t, a, b in dmap.overlap_list:
        d = abs(blocks[s][sigma[s][a], sigma[s][b]] - blocks[t][sigma[t][a], sigma[t][b]])
        if d > worst[0]:
            worst = (d, (a, b), dmap.tree_edges[k])
    if worst[0] > tol:
        raise OverlapMismatchError(worst[1], worst[0], worst[2])
    rows, cols, vals = [], [], []
    for (i, j), s in dmap.owner.items():
        rows.append(i)
        cols.append(j)
        vals.append(blocks[s][sigma[s][i], sigma[s][j]])
    return SymSparseMatrix(dmap.n, rows, cols, vals)
