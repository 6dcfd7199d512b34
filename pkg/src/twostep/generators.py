"""Small instance generators used as fixtures and by the bench scripts."""
from __future__ import annotations

import numpy as np

from .problem import SdpProblem, SymSparseMatrix


def example_boundary() -> SdpProblem:
    """``min X_22`` s.t. ``X_33 = 0``, ``X_22 + 2 X_13 = 1``; optimum 1, dual optimum 0."""
    n = 3
    return SdpProblem(
        objective=SymSparseMatrix.from_entries(n, {(1, 1): 1.0}),
        constraints=(
            SymSparseMatrix.from_entries(n, {(2, 2): 1.0}),
            SymSparseMatrix.from_entries(n, {(1, 1): 1.0, (0, 2): 1.0}),
        ),
        rhs=(0.0, 1.0),
        blocks=(3,),
        provenance="boundary example: X_33 = 0, X_22 + 2 X_13 = 1",
    )


def trace_instance(n: int) -> SdpProblem:
    """``min tr(X)``... with the single constraint ``tr(X) = 1``."""
    eye = SymSparseMatrix(n, range(n), range(n), np.ones(n))
    return SdpProblem(eye, (eye,), (1.0,), (n,), provenance=f"trace constraint n={n}")


def lp_instance(c, A, b) -> SdpProblem:
    """``min c'x`` s.t. ``A x = b``, ``x >= 0`` as one diagonal block."""
    c = np.asarray(c, float)
    A = np.atleast_2d(np.asarray(A, float))
    k = c.size
    idx = np.arange(k)
    cons = tuple(SymSparseMatrix(k, idx, idx, row) for row in A)
    return SdpProblem(SymSparseMatrix(k, idx, idx, c), cons, tuple(np.asarray(b, float)), (-k,),
                      provenance="linear program")


def lp_equal_pair() -> SdpProblem:
    """``min x`` over ``x, y >= 0`` with ``x - y = 0`` and ``x + y = 0``.

    The feasible set is the single point 0, which has no relative interior
    in the orthant; the second row makes the face visible to a diagonal
    certificate (``y = (0, 1)`` gives ``diag(1, 1)``).
    """
    return lp_instance([1.0, 0.0], [[1.0, -1.0], [1.0, 1.0]], [0.0, 0.0])


def maxcut(n: int, edges, weights=None) -> SdpProblem:
    """``max (1/4) L . X`` s.t. ``diag(X) = 1``."""
    weights = np.ones(len(edges)) if weights is None else np.asarray(weights, float)
    L = np.zeros((n, n))
    for (i, j), w in zip(edges, weights):
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w
    cons = tuple(SymSparseMatrix(n, [i], [i], [1.0]) for i in range(n))
    return SdpProblem(SymSparseMatrix.from_dense(0.25 * L), cons, (1.0,) * n, (n,), sense="max",
                      provenance=f"maxcut n={n} |E|={len(edges)}")


def _banded_random(rng, n, bandwidth, density=1.0):
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i, min(n, i + bandwidth + 1)):
            if i == j or rng.random() < density:
                A[i, j] = A[j, i] = rng.standard_normal()
    return A


def random_banded(n: int, bandwidth: int, m: int, rng, density: float = 0.7) -> SdpProblem:
    """Strictly feasible primal and dual instance with a banded pattern.

    ``b = A(X0)`` for a positive definite ``X0`` and ``C`` is a diagonally
    dominant banded matrix, so ``y = 0`` is a dual interior point.
    """
    X0 = np.eye(n) + 0.1 * _banded_random(rng, n, bandwidth)
    X0 = X0 @ X0.T + 0.5 * np.eye(n)
    cons = []
    for _ in range(m):
        A = _banded_random(rng, n, bandwidth, density)
        cons.append(SymSparseMatrix.from_dense(A))
    Cd = _banded_random(rng, n, bandwidth, density)
    Cd += np.diag(np.abs(Cd).sum(axis=1) + 1.0)
    rhs = tuple(A.inner_dense(X0) for A in cons)
    return SdpProblem(SymSparseMatrix.from_dense(Cd), tuple(cons), rhs, (n,),
                      provenance=f"random banded n={n} bw={bandwidth} m={m}")


def random_dense(n: int, m: int, rng) -> SdpProblem:
    X0 = rng.standard_normal((n, n))
    X0 = X0 @ X0.T + np.eye(n)
    cons = []
    for _ in range(m):
        A = rng.standard_normal((n, n))
        cons.append(SymSparseMatrix.from_dense(A + A.T))
    G = rng.standard_normal((n, n))
    C = G @ G.T + np.eye(n)
    rhs = tuple(A.inner_dense(X0) for A in cons)
    return SdpProblem(SymSparseMatrix.from_dense(C), tuple(cons), rhs, (n,), provenance=f"random dense n={n}")


def random_orthonormal(rng, n: int, k: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, max(k, 1))))
    return (Q * np.sign(np.diag(R)))[:, :k]


def planted_face(n: int, rng, kind: str | None = None, extra: int = 2) -> SdpProblem:
    """Feasible instance with no positive definite feasible point.

    kinds:
      ``diag``    constraints ``X_kk = 0`` for a few random ``k``;
      ``rotated`` an exposing constraint ``U D U' . X = 0`` for a random
                  orthonormal ``U``, mixed into the other constraints;
      ``chain``   the boundary example pattern, needing two reduction steps
                  (``X_nn = 0`` then ``X_22 + 2 X_1n = 0``) after a random
                  rotation.
    A planted feasible point ``X0`` on the face fixes ``b = A(X0)``.
    """
    kind = kind or rng.choice(["diag", "rotated", "chain"])
    if kind == "diag":
        r = int(rng.integers(1, max(2, n // 3) + 1))
        zero = rng.choice(n, size=r, replace=False)
        keep = np.setdiff1d(np.arange(n), zero)
        W = np.eye(n)[:, keep]
        exposing = [np.outer(np.eye(n)[k], np.eye(n)[k]) for k in zero]
        Q = np.eye(n)
    elif kind == "rotated":
        r = int(rng.integers(1, max(2, n // 3) + 1))
        Q = random_orthonormal(rng, n, n)
        U, W = Q[:, :r], Q[:, r:]
        exposing = [U @ np.diag(rng.uniform(0.5, 2.0, r)) @ U.T]
        Q = np.eye(n)
    elif kind == "chain":
        e = np.eye(n)
        W = e[:, 2:n - 1] if n > 3 else np.zeros((n, 0))
        W = np.column_stack([e[:, 0], W]) if n > 3 else e[:, :1]
        exposing = [np.outer(e[n - 1], e[n - 1]),
                    np.outer(e[1], e[1]) + np.outer(e[0], e[n - 1]) + np.outer(e[n - 1], e[0])]
        Q = random_orthonormal(rng, n, n)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    k = W.shape[1]
    Y = rng.standard_normal((k, k))
    X0 = W @ (Y @ Y.T + np.eye(k)) @ W.T
    mats = list(exposing)
    for _ in range(extra):
        G = rng.standard_normal((n, n))
        mats.append(G + G.T)
    if kind == "rotated":
        G = rng.standard_normal((len(mats), len(mats))) + 2 * np.eye(len(mats))
        mats = [sum(G[i, j] * mats[j] for j in range(len(mats))) for i in range(len(mats))]
    mats = [Q @ A @ Q.T for A in mats]
    X0 = Q @ X0 @ Q.T
    Cg = rng.standard_normal((n, n))
    cons = tuple(SymSparseMatrix.from_dense(A, tol=1e-15) for A in mats)
    rhs = tuple(float(np.sum(A * X0)) for A in mats)
    # exposing constraints have b = 0 exactly
    rhs = tuple(0.0 if i < len(exposing) and kind != "rotated" else v for i, v in enumerate(rhs))
    return SdpProblem(SymSparseMatrix.from_dense(Cg @ Cg.T + np.eye(n)), cons, rhs, (n,),
                      provenance=f"planted face ({kind}) n={n}")
