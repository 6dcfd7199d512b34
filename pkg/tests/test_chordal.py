import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_maximal_cliques, mcs_is_chordal, pattern_edges, random_graph
from twostep.chordal import (
    Ordering,
    SparsityGraph,
    aggregate_pattern,
    build_clique_tree,
    chordal_extension,
    clique_tree,
    is_perfect_elimination_ordering,
    maximal_cliques,
    merge_cliques,
    min_degree_order,
    running_intersection_holds,
)
from twostep.generators import example_boundary, random_banded
from twostep.problem import SdpProblem, SymSparseMatrix


def _fill(graph, order):
    return chordal_extension(graph, order) - graph.edges


@st.composite
def graphs(draw, max_n=9):
    n = draw(st.integers(1, max_n))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    edges = draw(st.sets(st.sampled_from(pairs), max_size=len(pairs))) if pairs else set()
    return SparsityGraph(n, frozenset(edges))


def test_graph_rejects_self_loop():
    with pytest.raises(ValueError):
        SparsityGraph(2, frozenset({(1, 1)}))


def test_ordering_inverse():
    o = Ordering((2, 0, 1))
    assert o.inverse().inverse() == o
    assert Ordering.from_sequence(o.sequence) == o
    with pytest.raises(ValueError):
        Ordering((0, 0, 1))


def test_aggregate_pattern_diagonal_is_empty():
    A = SymSparseMatrix.from_entries(3, {(0, 0): 1.0, (2, 2): 1.0})
    assert aggregate_pattern(SdpProblem(A, (A,), (1.0,), (3,))).edges == frozenset()


def test_aggregate_pattern_boundary_example():
    assert aggregate_pattern(example_boundary()).edges == {(0, 2)}


def test_aggregate_pattern_matches_triple_loop(rng):
    for _ in range(10):
        p = random_banded(int(rng.integers(4, 10)), 2, 3, rng, density=0.5)
        assert aggregate_pattern(p).edges == pattern_edges(p)


def test_min_degree_path_has_no_fill():
    g = SparsityGraph(3, frozenset({(0, 1), (1, 2)}))
    o = min_degree_order(g)
    assert o.sequence[0] in (0, 2)
    assert _fill(g, o) == frozenset()


def test_min_degree_star_leaves_first():
    g = SparsityGraph(5, frozenset({(4, k) for k in range(4)}))
    assert min_degree_order(g).sequence == [0, 1, 2, 3, 4]
    # with the centre at index 0 the last leaf ties with it at degree 1
    g = SparsityGraph(5, frozenset({(0, k) for k in range(1, 5)}))
    o = min_degree_order(g)
    assert o.sequence[:3] == [1, 2, 3]
    assert _fill(g, o) == frozenset()


def test_four_cycle_min_fill_is_one():
    g = SparsityGraph(4, frozenset({(0, 1), (1, 2), (2, 3), (0, 3)}))
    brute = min(len(_fill(g, Ordering.from_sequence(s))) for s in itertools.permutations(range(4)))
    assert brute == 1
    assert len(_fill(g, min_degree_order(g))) == 1


def test_four_cycle_natural_order_adds_chord():
    g = SparsityGraph(4, frozenset({(0, 1), (1, 2), (2, 3), (0, 3)}))
    assert _fill(g, Ordering.natural(4)) == {(1, 3)}


def test_complete_graph_no_fill_single_clique():
    g = SparsityGraph(4, frozenset(itertools.combinations(range(4), 2)))
    F = chordal_extension(g, Ordering.natural(4))
    assert F == g.edges
    assert maximal_cliques(F, Ordering.natural(4)) == [(0, 1, 2, 3)]


def test_path_cliques():
    F = frozenset({(0, 1), (1, 2)})
    assert sorted(maximal_cliques(F, Ordering.natural(3))) == [(0, 1), (1, 2)]


def test_single_clique_tree():
    t = clique_tree([(0, 1, 2)], 3)
    assert t.tree_edges == ()


def test_banded_chain():
    edges = {(i, j) for i in range(5) for j in range(i + 1, min(5, i + 3))}
    g = SparsityGraph(5, frozenset(edges))
    o = Ordering.natural(5)
    F = chordal_extension(g, o)
    assert F == g.edges
    cl = maximal_cliques(F, o)
    assert sorted(cl) == [(0, 1, 2), (1, 2, 3), (2, 3, 4)]
    t = clique_tree(cl, 5, F)
    assert all(len(q) == 2 for q in t.separators())
    assert running_intersection_holds(t)


def test_disconnected_graph_gets_zero_separator_edges():
    g = SparsityGraph(5, frozenset({(0, 1), (3, 4)}))
    o = min_degree_order(g)
    F = chordal_extension(g, o)
    t = clique_tree(maximal_cliques(F, o), 5, F)
    assert len(t.tree_edges) == len(t.cliques) - 1
    assert any(len(q) == 0 for q in t.separators())
    assert (2,) in t.cliques
    assert running_intersection_holds(t)


def test_merge_keeps_running_intersection():
    edges = {(i, j) for i in range(8) for j in range(i + 1, min(8, i + 3))}
    g = SparsityGraph(8, frozenset(edges))
    o = Ordering.natural(8)
    F = chordal_extension(g, o)
    t = clique_tree(maximal_cliques(F, o), 8, F)
    merged = merge_cliques(t, 4)
    assert len(merged.cliques) < len(t.cliques)
    assert all(len(c) <= 4 for c in merged.cliques)
    assert running_intersection_holds(merged)
    assert mcs_is_chordal(8, merged.filled_edges)


def test_running_intersection_detects_violation():
    from twostep.chordal import CliqueTree

    bad = CliqueTree(((0, 1), (2, 3), (1, 4)), ((0, 1), (1, 2)), frozenset(), 5)
    assert not running_intersection_holds(bad)


def test_oracle_self_check():
    assert not mcs_is_chordal(4, {(0, 1), (1, 2), (2, 3), (0, 3)})
    assert mcs_is_chordal(4, {(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)})
    assert brute_force_maximal_cliques(3, {(0, 1), (1, 2)}) == {frozenset({0, 1}), frozenset({1, 2})}


@given(graphs())
def test_extension_is_chordal_and_contains_graph(g):
    o = min_degree_order(g)
    F = chordal_extension(g, o)
    assert g.edges <= F
    assert mcs_is_chordal(g.n, F)
    assert is_perfect_elimination_ordering(g.n, F, o)


@given(graphs(), st.randoms(use_true_random=False))
def test_extension_under_any_order(g, rnd):
    seq = list(range(g.n))
    rnd.shuffle(seq)
    o = Ordering.from_sequence(seq)
    F = chordal_extension(g, o)
    assert mcs_is_chordal(g.n, F)
    assert is_perfect_elimination_ordering(g.n, F, o)


@given(graphs())
def test_cliques_match_brute_force(g):
    o = min_degree_order(g)
    F = chordal_extension(g, o)
    cl = maximal_cliques(F, o)
    assert {frozenset(c) for c in cl} == brute_force_maximal_cliques(g.n, F)
    assert len(cl) <= g.n


@given(graphs())
def test_clique_tree_invariants(g):
    o = min_degree_order(g)
    F = chordal_extension(g, o)
    t = clique_tree(maximal_cliques(F, o), g.n, F)
    ell = len(t.cliques)
    assert len(t.tree_edges) == ell - 1
    assert running_intersection_holds(t)
    # spanning: union-find over the tree edges
    parent = list(range(ell))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for s, u in t.tree_edges:
        parent[find(s)] = find(u)
    assert len({find(s) for s in range(ell)}) == min(ell, 1)


@given(graphs())
def test_tree_is_maximum_weight(g):
    o = min_degree_order(g)
    F = chordal_extension(g, o)
    cl = maximal_cliques(F, o)
    t = clique_tree(cl, g.n, F)
    ell = len(cl)
    if ell > 6:
        return
    w = {(s, u): len(set(cl[s]) & set(cl[u])) for s in range(ell) for u in range(s + 1, ell)}
    best = 0
    for sub in itertools.combinations(w, ell - 1):
        parent = list(range(ell))

        def find(a):
            while parent[a] != a:
                a = parent[a]
            return a

        ok = True
        for s, u in sub:
            a, b = find(s), find(u)
            if a == b:
                ok = False
                break
            parent[a] = b
        if ok:
            best = max(best, sum(w[e] for e in sub))
    got = sum(len(q) for q in t.separators())
    assert got == best


def test_build_clique_tree_on_problem(rng):
    p = random_banded(10, 3, 4, rng)
    s = build_clique_tree(p)
    assert s.graph.edges <= s.filled
    assert s.fill_count == len(s.filled) - len(s.graph.edges)
    assert running_intersection_holds(s.tree)
    s2 = build_clique_tree(p, reorder=False)
    assert s2.order == Ordering.natural(10)
