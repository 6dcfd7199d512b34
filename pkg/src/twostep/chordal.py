"""Aggregate sparsity graph, minimum-degree ordering, symbolic fill,
maximal cliques of the filled graph and a clique tree over them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import SdpProblem

Edge = tuple[int, int]


def _edge(j: int, k: int) -> Edge:
    return (j, k) if j < k else (k, j)


@dataclass(frozen=True)
class SparsityGraph:
    n: int
    edges: frozenset[Edge]

    def __post_init__(self):
        edges = frozenset(_edge(int(j), int(k)) for j, k in self.edges)
        for j, k in edges:
            if j == k:
                raise ValueError(f"self-loop at {j}")
            if not (0 <= j < self.n and 0 <= k < self.n):
                raise ValueError(f"edge ({j}, {k}) outside 0..{self.n - 1}")
        object.__setattr__(self, "edges", edges)

    def adjacency(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for j, k in self.edges:
            adj[j].add(k)
            adj[k].add(j)
        return adj


@dataclass(frozen=True)
class Ordering:
    """``perm[v]`` is the elimination position of vertex ``v``."""

    perm: tuple[int, ...]

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError("perm is not a permutation")
        object.__setattr__(self, "perm", perm)

    @classmethod
    def natural(cls, n: int) -> "Ordering":
        return cls(tuple(range(n)))

    @classmethod
    def from_sequence(cls, seq) -> "Ordering":
        """Build from an elimination sequence (vertex eliminated first, ...)."""
        perm = [0] * len(seq)
        for pos, v in enumerate(seq):
            perm[v] = pos
        return cls(tuple(perm))

    @property
    def sequence(self) -> list[int]:
        seq = [0] * len(self.perm)
        for v, pos in enumerate(self.perm):
            seq[pos] = v
        return seq

    def inverse(self) -> "Ordering":
        return Ordering(tuple(self.sequence))


@dataclass(frozen=True)
class CliqueTree:
    cliques: tuple[tuple[int, ...], ...]
    tree_edges: tuple[Edge, ...]
    filled_edges: frozenset[Edge]
    n: int = 0

    def separator(self, s: int, t: int) -> tuple[int, ...]:
        return tuple(sorted(set(self.cliques[s]) & set(self.cliques[t])))

    def separators(self) -> list[tuple[int, ...]]:
        return [self.separator(s, t) for s, t in self.tree_edges]


def aggregate_pattern(problem: SdpProblem) -> SparsityGraph:
    """Off-diagonal union pattern of ``C`` and every ``A_i``."""
    edges = set()
    for A in (problem.objective, *problem.constraints):
        off = A.rows != A.cols
        edges.update(zip(A.rows[off].tolist(), A.cols[off].tolist()))
    return SparsityGraph(problem.n, frozenset(edges))


def min_degree_order(graph: SparsityGraph) -> Ordering:
    """Exact minimum-degree elimination; ties go to the smallest index."""
    adj = graph.adjacency()
    alive = set(range(graph.n))
    seq = []
    while alive:
        v = min(alive, key=lambda u: (len(adj[u]), u))
        nbrs = adj[v]
        for a in nbrs:
            adj[a].discard(v)
            adj[a].update(nbrs - {a})
        adj[v] = set()
        alive.remove(v)
        seq.append(v)
    return Ordering.from_sequence(seq)


def chordal_extension(graph: SparsityGraph, order: Ordering) -> frozenset[Edge]:
    """Symbolic elimination fill of ``graph`` under ``order``."""
    if len(order.perm) != graph.n:
        raise ValueError("ordering size differs from vertex count")
    pos = order.perm
    adj = graph.adjacency()
    filled = set(graph.edges)
    for v in order.sequence:
        later = [u for u in adj[v] if pos[u] > pos[v]]
        for a_idx, a in enumerate(later):
            for b in later[a_idx + 1:]:
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
                    filled.add(_edge(a, b))
    return frozenset(filled)


def _higher_neighbours(n: int, filled, order: Ordering) -> list[list[int]]:
    pos = order.perm
    higher: list[list[int]] = [[] for _ in range(n)]
    for j, k in filled:
        lo, hi = (j, k) if pos[j] < pos[k] else (k, j)
        higher[lo].append(hi)
    return higher


def maximal_cliques(filled, order: Ordering) -> list[tuple[int, ...]]:
    """Maximal cliques of a chordal graph from a perfect elimination ordering.

    ``K_v`` is ``v`` plus its later neighbours; it is dropped when some
    earlier vertex ``u`` whose first later neighbour is ``v`` has
    ``|K_u| = |K_v| + 1`` (then ``K_v`` is a subset of ``K_u``). Cliques are
    returned sorted, in elimination order of their generating vertex.
    """
    n = len(order.perm)
    pos = order.perm
    filled = frozenset(_edge(*e) for e in filled)
    higher = _higher_neighbours(n, filled, order)
    for v in range(n):
        hv = higher[v]
        for a_idx, a in enumerate(hv):
            for b in hv[a_idx + 1:]:
                if _edge(a, b) not in filled:
                    raise ValueError(
                        f"ordering is not a perfect elimination ordering: "
                        f"later neighbours {a} and {b} of {v} are not adjacent"
                    )
    absorbed = [False] * n
    for u in range(n):
        if higher[u]:
            parent = min(higher[u], key=lambda w: pos[w])
            if len(higher[u]) == len(higher[parent]) + 1:
                absorbed[parent] = True
    cliques = []
    for v in order.sequence:
        if not absorbed[v]:
            cliques.append(tuple(sorted([v, *higher[v]])))
    return cliques


def clique_tree(cliques, n: int, filled=None) -> CliqueTree:
    """Maximum-weight spanning tree of the clique intersection graph.

    Weight is separator size. Zero-weight edges are allowed, so a
    disconnected graph yields one tree whose cross-component edges carry
    empty separators. Prim's algorithm, deterministic ties (lowest index).
    """
    cliques = tuple(tuple(sorted(c)) for c in cliques)
    sets = [set(c) for c in cliques]
    ell = len(cliques)
    edges: list[Edge] = []
    if ell:
        in_tree = [False] * ell
        best = np.full(ell, -1, dtype=np.int64)
        link = np.full(ell, -1, dtype=np.int64)
        in_tree[0] = True
        for t in range(1, ell):
            best[t] = len(sets[0] & sets[t])
            link[t] = 0
        for _ in range(ell - 1):
            cand = [t for t in range(ell) if not in_tree[t]]
            t = max(cand, key=lambda u: (best[u], -u))
            in_tree[t] = True
            edges.append((int(link[t]), t))
            for u in range(ell):
                if not in_tree[u]:
                    w = len(sets[t] & sets[u])
                    if w > best[u]:
                        best[u] = w
                        link[u] = t
    if filled is None:
        filled = set()
        for c in cliques:
            for a_idx, a in enumerate(c):
                for b in c[a_idx + 1:]:
                    filled.add((a, b))
    return CliqueTree(cliques, tuple(edges), frozenset(filled), n)


def merge_cliques(tree: CliqueTree, threshold: int) -> CliqueTree:
    """Fuse adjacent cliques while the union has at most ``threshold`` vertices.

    Contracting a clique-tree edge keeps the running-intersection property;
    the fill grows by the edges needed to make each union complete.
    """
    cliques = [set(c) for c in tree.cliques]
    edges = [tuple(e) for e in tree.tree_edges]
    alive = [True] * len(cliques)
    changed = True
    while changed:
        changed = False
        for k, (s, t) in enumerate(edges):
            if len(cliques[s] | cliques[t]) <= threshold:
                cliques[s] |= cliques[t]
                alive[t] = False
                edges.pop(k)
                edges = [(s if a == t else a, s if b == t else b) for a, b in edges]
                changed = True
                break
    index = {}
    kept = []
    for s, c in enumerate(cliques):
        if alive[s]:
            index[s] = len(kept)
            kept.append(tuple(sorted(c)))
    new_edges = tuple((index[a], index[b]) for a, b in edges)
    filled = set(tree.filled_edges)
    for c in kept:
        for a_idx, a in enumerate(c):
            for b in c[a_idx + 1:]:
                filled.add((a, b))
    return CliqueTree(tuple(kept), new_edges, frozenset(filled), tree.n)


def is_perfect_elimination_ordering(n: int, edges, order: Ordering) -> bool:
    edges = frozenset(_edge(*e) for e in edges)
    higher = _higher_neighbours(n, edges, order)
    return all(
        _edge(a, b) in edges
        for hv in higher
        for i, a in enumerate(hv)
        for b in hv[i + 1:]
    )


def running_intersection_holds(tree: CliqueTree) -> bool:
    """Every vertex's cliques induce a connected subtree."""
    ell = len(tree.cliques)
    nbrs: list[list[int]] = [[] for _ in range(ell)]
    for s, t in tree.tree_edges:
        nbrs[s].append(t)
        nbrs[t].append(s)
    where: dict[int, list[int]] = {}
    for s, c in enumerate(tree.cliques):
        for v in c:
            where.setdefault(v, []).append(s)
    for v, nodes in where.items():
        allowed = set(nodes)
        seen = {nodes[0]}
        stack = [nodes[0]]
        while stack:
            s = stack.pop()
            for t in nbrs[s]:
                if t in allowed and t not in seen:
                    seen.add(t)
                    stack.append(t)
        if seen != allowed:
            return False
    return True


@dataclass
class ChordalStructure:
    """Intermediate products of the reorder / embed / cliques substeps."""

    graph: SparsityGraph
    order: Ordering
    filled: frozenset
    tree: CliqueTree
    fill_count: int = field(init=False)

    def __post_init__(self):
        self.fill_count = len(self.filled) - len(self.graph.edges)


def build_clique_tree(problem: SdpProblem, reorder: bool = True, merge_threshold: int | None = None) -> ChordalStructure:
    graph = aggregate_pattern(problem)
    order = min_degree_order(graph) if reorder else Ordering.natural(graph.n)
    filled = chordal_extension(graph, order)
    cliques = maximal_cliques(filled, order)
    tree = clique_tree(cliques, graph.n, filled)
    if merge_threshold:
        tree = merge_cliques(tree, merge_threshold)
    return ChordalStructure(graph, order, tree.filled_edges, tree)
