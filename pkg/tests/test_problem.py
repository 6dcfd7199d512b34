import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import dense, dense_evaluate
from strategies import block_diag_psd, block_matrices, block_lists, problems
from twostep.generators import example_boundary
from twostep.problem import SdpaFormatError, SdpProblem, SymSparseMatrix, evaluate, parse_sdpa, write_sdpa


def test_parse_one_block_example():
    p = parse_sdpa("1\n1\n2\n1.0\n0 1 1 1 1.0\n1 1 1 2 0.5\n")
    assert (p.n, p.m) == (2, 1)
    assert np.array_equal(p.objective.to_dense(), [[1, 0], [0, 0]])
    assert p.constraints[0].to_dict() == {(0, 1): 0.5}
    assert p.rhs == (1.0,)


BOUNDARY_TEXT = """\
" boundary example
2
1
3
0 1
0 1 2 2 1
1 1 3 3 1
2 1 2 2 1
2 1 1 3 1
"""


def test_parse_boundary_example():
    p = parse_sdpa(BOUNDARY_TEXT, sense="min")
    assert (p.n, p.m) == (3, 2)
    assert p.rhs == (0.0, 1.0)
    assert p.constraints[0].to_dict() == {(2, 2): 1.0}
    assert p.constraints[1].to_dict() == {(1, 1): 1.0, (0, 2): 1.0}
    ref = example_boundary()
    assert p.objective == ref.objective and p.constraints == ref.constraints


def test_write_boundary_round_trip():
    p = example_boundary()
    assert parse_sdpa(write_sdpa(p)) == p


def test_empty_constraints_round_trip():
    p = SdpProblem(SymSparseMatrix.from_entries(2, {(0, 0): 1.0}), (), (), (2,))
    text = write_sdpa(p)
    assert parse_sdpa(text) == p
    assert not any(line.startswith("1 ") for line in text.splitlines())


def test_diagonal_block_written_on_diagonal_only():
    A = SymSparseMatrix.from_entries(3, {(0, 0): 1.0, (1, 1): -2.0, (2, 2): 3.0})
    p = SdpProblem(A, (A,), (1.0,), (-3,))
    for line in write_sdpa(p).splitlines():
        toks = line.split()
        if len(toks) == 5 and not line.startswith("*"):
            assert toks[2] == toks[3]


def test_braces_and_commas_tolerated():
    p = parse_sdpa("1\n1\n{2}\n(1.0,)\n0 1 1 1 1.0\n1 1 2 1 0.5\n")
    assert p.constraints[0].to_dict() == {(0, 1): 0.5}


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("1\n1\n2\n1.0\n0 1 1 3 1.0\n", "outside block"),
        ("1\n1\n2\n1.0\n1 1 1 1 1.0\n1 1 1 1 2.0\n", "duplicate"),
        ("1\n1\n2\n1.0\n1 1 1 x 1.0\n", "line 5"),
        ("1\n1\n-2\n1.0\n1 1 1 2 1.0\n", "diagonal block"),
        ("2\n1\n2\n1.0\n", "end of input"),
        ("1\n1\n2\n1.0\n3 1 1 1 1.0\n", "matrix number"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(SdpaFormatError, match=fragment):
        parse_sdpa(text)


def test_sense_comment_and_override():
    p = example_boundary().replace(sense="max")
    text = write_sdpa(p)
    assert parse_sdpa(text).sense == "max"
    assert parse_sdpa(text, sense="min").sense == "min"
    stripped = "\n".join(l for l in text.splitlines() if not l.startswith("*"))
    assert parse_sdpa(stripped).sense == "min"
    assert parse_sdpa(stripped, default_sense="max").sense == "max"


def test_symsparse_validation():
    with pytest.raises(ValueError, match="duplicate"):
        SymSparseMatrix(2, [0, 1], [1, 0], [1.0, 2.0])
    with pytest.raises(ValueError):
        SymSparseMatrix(2, [2], [0], [1.0])
    A = SymSparseMatrix(2, [1], [0], [3.0])
    assert (A.rows[0], A.cols[0]) == (0, 1)
    with pytest.raises(AttributeError):
        A.dim = 3


def test_problem_validation():
    A = SymSparseMatrix.from_entries(3, {(0, 2): 1.0})
    with pytest.raises(ValueError, match="across blocks"):
        SdpProblem(A, (A,), (1.0,), (2, 1))
    with pytest.raises(ValueError, match="off-diagonal"):
        SdpProblem(A, (), (), (-3,))
    with pytest.raises(ValueError, match="rhs length"):
        SdpProblem(A, (A,), (), (3,))


def test_evaluate_boundary_point():
    obj, res = evaluate(example_boundary(), np.diag([0.0, 1.0, 0.0]))
    assert obj == 1.0
    assert np.array_equal(res, [0.0, 0.0])


def test_evaluate_dimension_mismatch():
    with pytest.raises(ValueError):
        evaluate(example_boundary(), np.eye(2))


@given(problems())
def test_round_trip(p):
    q = parse_sdpa(write_sdpa(p))
    assert q == p


@given(problems())
def test_evaluate_zero(p):
    obj, res = evaluate(p, np.zeros((p.n, p.n)))
    assert obj == 0.0
    assert np.array_equal(res, -p.b)


@given(problems(), st.integers(0, 2**32 - 1))
def test_evaluate_matches_dense_oracle(p, seed):
    X = block_diag_psd(np.random.default_rng(seed), p.blocks)
    obj, res = evaluate(p, X)
    obj_ref, res_ref = dense_evaluate(p, X)
    assert obj == pytest.approx(obj_ref, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(res, res_ref.reshape(p.m), rtol=1e-12, atol=1e-12)


@given(block_lists().flatmap(lambda b: st.tuples(block_matrices(b), block_matrices(b))))
def test_inner_symmetric_and_matches_trace(pair):
    A, B = pair
    assert A.inner(B) == B.inner(A)
    assert A.inner(B) == pytest.approx(float(np.trace(dense(A) @ dense(B))), abs=1e-9)
    assert A.inner_dense(dense(B)) == pytest.approx(A.inner(B), abs=1e-9)
