import numpy as np
import pytest
from hypothesis import given, strategies as st

from twostep.chordal import build_clique_tree, clique_tree
from twostep.decomposition import (
    DecompositionError,
    DecompositionMap,
    OverlapMismatchError,
    decompose,
    overlap_count_formula,
    ownership,
    recover_solution,
)
from twostep.generators import random_banded, random_dense
from twostep.problem import SdpProblem, SymSparseMatrix, evaluate


def _path_problem():
    C = SymSparseMatrix.from_entries(3, {(0, 0): 1.0, (1, 1): 1.0, (2, 2): 1.0})
    A1 = SymSparseMatrix.from_entries(3, {(0, 1): 1.0, (1, 2): 1.0})
    A2 = SymSparseMatrix.from_entries(3, {(1, 1): 1.0})
    return SdpProblem(C, (A1, A2), (0.5, 1.0), (3,))


def _restrict(dec, X):
    return dec.map.assemble(dec.map.restrict(X))


def test_path_problem_two_blocks_one_overlap():
    p = _path_problem()
    dec = decompose(p, build_clique_tree(p).tree)
    assert dec.problem.blocks == (2, 2)
    assert dec.problem.m == p.m + 1
    assert dec.overlap_count == 1
    (k, s, t, a, b), = dec.map.overlap_list
    assert (a, b) == (1, 1)
    assert dec.problem.constraints[-1].to_dense().sum() == 0.0


def test_dense_pattern_is_identity():
    rng = np.random.default_rng(3)
    p = random_dense(5, 3, rng)
    dec = decompose(p, build_clique_tree(p).tree)
    assert dec.overlap_count == 0
    assert dec.problem.blocks == (5,)
    perm = list(dec.map.cliques[0])
    P = np.eye(5)[:, perm]
    for A, B in zip((p.objective, *p.constraints), (dec.problem.objective, *dec.problem.constraints)):
        np.testing.assert_array_equal(P.T @ A.to_dense() @ P, B.to_dense())


def test_every_filled_position_has_one_owner(rng):
    p = random_banded(9, 2, 3, rng)
    tree = build_clique_tree(p).tree
    own = ownership(tree.cliques)
    positions = {(min(a, b), max(a, b)) for c in tree.cliques for a in c for b in c}
    assert set(own) == positions
    for (i, j), s in own.items():
        assert s == min(t for t, c in enumerate(tree.cliques) if i in c and j in c)


def test_nonzero_outside_cliques_rejected():
    p = _path_problem()
    tree = clique_tree([(0, 1), (2,)], 3)
    with pytest.raises(DecompositionError, match="outside every clique"):
        decompose(p, tree)


def test_singleton_cliques_share_a_diagonal_block():
    C = SymSparseMatrix.from_entries(4, {(0, 1): 1.0, (2, 2): 1.0, (3, 3): 1.0})
    p = SdpProblem(C, (C,), (1.0,), (4,))
    dec = decompose(p, build_clique_tree(p).tree)
    assert dec.problem.blocks == (2, -2)


def test_overlap_mismatch_reported(rng):
    p = random_banded(7, 2, 2, rng)
    dec = decompose(p, build_clique_tree(p).tree)
    blocks = dec.map.restrict(np.eye(7))
    k, s, t, a, b = dec.map.overlap_list[0]
    sig = dec.map.sigma
    blocks[t][sig[t][a], sig[t][b]] += 1e-3
    blocks[t][sig[t][b], sig[t][a]] = blocks[t][sig[t][a], sig[t][b]]
    with pytest.raises(OverlapMismatchError) as err:
        recover_solution(blocks, dec.map)
    assert err.value.discrepancy == pytest.approx(1e-3)


def test_map_json_round_trip(rng):
    p = random_banded(8, 3, 3, rng)
    dec = decompose(p, build_clique_tree(p).tree)
    assert DecompositionMap.from_json(dec.map.to_json()) == dec.map
    with pytest.raises(DecompositionError):
        DecompositionMap.from_json('{"format": "other"}')


@st.composite
def banded(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(3, 10))
    bw = draw(st.integers(1, 3))
    m = draw(st.integers(1, 4))
    rng = np.random.default_rng(seed)
    return random_banded(n, bw, m, rng, density=draw(st.floats(0.2, 1.0))), rng


@given(banded(), st.booleans())
def test_restriction_is_feasible_with_same_objective(data, reorder):
    p, rng = data
    tree = build_clique_tree(p, reorder=reorder).tree
    dec = decompose(p, tree)
    G = rng.standard_normal((p.n, p.n))
    X = G @ G.T
    Xd = _restrict(dec, X)
    obj, res = evaluate(p, X)
    obj_d, res_d = evaluate(dec.problem, Xd)
    assert obj_d == pytest.approx(obj, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(res_d[: p.m], res, atol=1e-10)
    np.testing.assert_allclose(res_d[p.m:], 0.0, atol=1e-12)


@given(banded())
def test_constraint_count_formula(data):
    p, _ = data
    tree = build_clique_tree(p).tree
    dec = decompose(p, tree)
    assert dec.problem.m == overlap_count_formula(p.m, tree)
    assert dec.problem.m == p.m + sum(len(q) * (len(q) + 1) // 2 for q in tree.separators())


@given(banded())
def test_recover_inverts_restriction_on_pattern(data):
    p, rng = data
    tree = build_clique_tree(p).tree
    dec = decompose(p, tree)
    G = rng.standard_normal((p.n, p.n))
    X = G @ G.T
    R = recover_solution(dec.map.restrict(X), dec.map)
    for i, j, v in R.items():
        assert v == X[i, j]
    assert set(zip(R.rows.tolist(), R.cols.tolist())) == set(dec.map.owner)
    # objective and constraint equivalence read only pattern entries
    obj, res = evaluate(p, R.to_dense())
    obj_d, res_d = evaluate(dec.problem, _restrict(dec, X))
    assert obj == pytest.approx(obj_d, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(res, res_d[: p.m], atol=1e-10)


@given(banded())
def test_overlap_ordering_deterministic(data):
    p, _ = data
    tree = build_clique_tree(p).tree
    dec = decompose(p, tree)
    keys = [(k, a, b) for k, s, t, a, b in dec.map.overlap_list]
    assert keys == sorted(keys)
    assert decompose(p, tree).problem == dec.problem
