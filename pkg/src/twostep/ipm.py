"""Infeasible-start primal-dual path-following SDP solver.

HKM search direction with a Mehrotra predictor-corrector, over a
block-diagonal cone of dense PSD blocks and diagonal (LP) blocks. The Schur
complement ``M = W W'`` is factored through a QR decomposition of ``W'`` so
its conditioning is never squared; large problems fall back to forming
``M`` with a Cholesky factorization and, if that breaks down, a truncated
eigen pseudo-inverse. Primal directions are projected back onto
``A(dX) = Rp`` and step lengths keep the iterates in a wide neighbourhood
of the central path, which is what lets degenerate (clique-decomposed)
problems reach tight gaps.

Works on ``min C.X s.t. A(X) = b, X PSD`` with dual
``max b'y s.t. A^T(y) + Z = C, Z PSD``.
"""
from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .problem import SdpProblem, SolverResult, Status, SymSparseMatrix, evaluate

_CHUNK_ENTRIES = 2_000_000
PSEUDO_TOL = 1e-14
# wide-neighbourhood constant: lambda_min(X Z) >= NEIGHBORHOOD * mu
NEIGHBORHOOD = 1e-3
_REFINE_SWEEPS = 3
_QR_MAX_ENTRIES = 30_000_000


class SolverTimeout(RuntimeError):
    pass


@dataclass
class IpmOptions:
    max_iterations: int = 200
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    initial_scale: float | None = None
    step_fraction: float = 0.98
    infeas_tol: float = 1e-8
    verbose: bool = False
    debug: bool = False
    deadline: float | None = None  # time.monotonic() value

    def __post_init__(self):
        if self.gap_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.step_fraction < 1.0:
            raise ValueError("step_fraction must lie strictly inside (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


class _Block:
    """One cone block: constraint data restricted to it, vectorised."""

    def __init__(self, size: int, lp: bool, C: np.ndarray, Avec: sp.csr_matrix):
        self.k = size
        self.lp = lp
        self.C = C
        self.Avec = Avec  # m x k (LP) or m x k*k (dense, full symmetric)
        self.AvecT = Avec.T.tocsr()
        self.active = np.flatnonzero(np.diff(Avec.indptr))

    def A(self, X):
        return self.Avec @ X.ravel()

    def AT(self, y):
        v = self.AvecT @ y
        return v if self.lp else v.reshape(self.k, self.k)

    def factor_rows(self, X, Z) -> np.ndarray:
        """Rows ``W_i`` with ``W W' = M`` restricted to this block.

        With ``X = L L'`` and ``Z = R R'``, ``A_i . X A_j Z^{-1}`` is the
        inner product of ``R^{-1} A_i L`` and ``R^{-1} A_j L``.
        """
        if self.lp:
            return (self.Avec @ sp.diags(np.sqrt(X / Z))).toarray()
        k = self.k
        W = np.zeros((self.Avec.shape[0], k * k))
        rows = self.active
        if rows.size == 0:
            return W
        L = np.linalg.cholesky(X)
        Rinv = sla.solve_triangular(np.linalg.cholesky(Z), np.eye(k), lower=True)
        sub = self.Avec[rows]
        chunk = max(1, _CHUNK_ENTRIES // (k * k))
        for lo in range(0, rows.size, chunk):
            A3 = sub[lo:lo + chunk].toarray().reshape(-1, k, k)
            W[rows[lo:lo + chunk]] = (Rinv @ A3 @ L).reshape(-1, k * k)
        return W

    def schur(self, X, Zinv, out):
        if self.lp:
            D = sp.diags(X * Zinv)
            out += (self.Avec @ D @ self.AvecT).toarray()
            return
        rows = self.active
        if rows.size == 0:
            return
        sub = self.Avec[rows]
        k = self.k
        chunk = max(1, _CHUNK_ENTRIES // (k * k))
        G = np.empty((rows.size, k * k))
        for lo in range(0, rows.size, chunk):
            A3 = sub[lo:lo + chunk].toarray().reshape(-1, k, k)
            G[lo:lo + chunk] = (X @ A3 @ Zinv).reshape(-1, k * k)
        Mb = (sub @ G.T)
        out[np.ix_(rows, rows)] += 0.5 * (Mb + Mb.T)


def _blocks_of(problem: SdpProblem, C: SymSparseMatrix) -> list[_Block]:
    offs = problem.offsets()
    m = problem.m
    out = []
    mats = problem.constraints
    for b, size in enumerate(problem.blocks):
        lo, hi = int(offs[b]), int(offs[b + 1])
        k = hi - lo
        lp = size < 0
        rows, cols, vals = [], [], []
        for i, A in enumerate(mats):
            sel = (A.rows >= lo) & (A.rows < hi)
            if not sel.any():
                continue
            r, c, v = A.rows[sel] - lo, A.cols[sel] - lo, A.vals[sel]
            if lp:
                rows.append(np.full(r.size, i))
                cols.append(r)
                vals.append(v)
            else:
                off = r != c
                rows.append(np.full(r.size + off.sum(), i))
                cols.append(np.concatenate([r * k + c, c[off] * k + r[off]]))
                vals.append(np.concatenate([v, v[off]]))
        ncols = k if lp else k * k
        if rows:
            Avec = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, ncols)
            )
        else:
            Avec = sp.csr_matrix((m, ncols))
        sel = (C.rows >= lo) & (C.rows < hi)
        Cd = np.zeros((k, k))
        Cd[C.rows[sel] - lo, C.cols[sel] - lo] = C.vals[sel]
        Cd[C.cols[sel] - lo, C.rows[sel] - lo] = C.vals[sel]
        out.append(_Block(k, lp, np.diag(Cd).copy() if lp else Cd, Avec))
    return out


DEPENDENCE_TOL = 1e-10


def _independent_rows(blocks: list[_Block], b: np.ndarray) -> tuple[np.ndarray, float]:
    """Rows of ``A`` kept by a pivoted QR, and the rhs mismatch of the rest.

    A dependent row whose ``b_i`` agrees with the same combination of the
    kept rows is redundant; a mismatch means the system is inconsistent.
    """
    m = b.size
    A = sp.hstack([blk.Avec for blk in blocks]).toarray().T
    _, R, piv = sla.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > DEPENDENCE_TOL * d[0])) if d.size and d[0] > 0 else 0
    if r == m:
        return np.arange(m), 0.0
    keep, drop = np.sort(piv[:r]), piv[r:]
    coef, *_ = np.linalg.lstsq(A[:, keep], A[:, drop], rcond=None)
    mismatch = float(np.max(np.abs(b[drop] - coef.T @ b[keep]))) / (1.0 + float(np.max(np.abs(b))))
    return keep, mismatch


def _max_step(X, D, lp: bool) -> float:
    if lp:
        neg = D < 0
        return float(np.min(-X[neg] / D[neg])) if neg.any() else math.inf
    L = np.linalg.cholesky(X)
    W = sla.solve_triangular(L, D, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
    return -1.0 / lam if lam < 0 else math.inf


def _centrality(blocks, X, Z, dX, dZ, ap, ad) -> float:
    """Smallest eigenvalue of ``X^{1/2} Z X^{1/2}`` over all blocks after the step."""
    worst = math.inf
    for blk, Xb, Zb, dx, dz in zip(blocks, X, Z, dX, dZ):
        Xn, Zn = Xb + ap * dx, Zb + ad * dz
        if blk.lp:
            worst = min(worst, float(np.min(Xn * Zn)))
            continue
        try:
            L = np.linalg.cholesky(0.5 * (Xn + Xn.T))
        except np.linalg.LinAlgError:
            return -math.inf
        T = L.T @ Zn @ L
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (T + T.T))[0]))
    return worst


def _inner(X, Z, lp):
    return float(X @ Z) if lp else float(np.sum(X * Z))


def _assemble(problem: SdpProblem, parts) -> np.ndarray:
    n = problem.n
    out = np.zeros((n, n))
    offs = problem.offsets()
    for b, P in enumerate(parts):
        lo, hi = int(offs[b]), int(offs[b + 1])
        out[lo:hi, lo:hi] = np.diag(P) if P.ndim == 1 else P
    return out


def _factor(M: np.ndarray):
    """Solver for ``M dy = r``: Cholesky, or a truncated eigen pseudo-inverse
    once ``M`` has lost definiteness to roundoff (degenerate problems near
    the optimum); the truncated directions leave ``y`` undetermined anyway."""
    try:
        fac = sla.cho_factor(M, lower=True, check_finite=True)
        return lambda r: sla.cho_solve(fac, r)
    except (np.linalg.LinAlgError, ValueError):
        pass
    if not np.all(np.isfinite(M)):
        return None
    w, Q = np.linalg.eigh(M)
    keep = w > PSEUDO_TOL * max(float(w[-1]), 0.0)
    if not keep.any():
        return None
    Qk, wk = Q[:, keep], w[keep]
    return lambda r: Qk @ ((Qk.T @ r) / wk)


def _factor_qr(blocks: list[_Block], X, Z, m: int):
    """Solver for ``M dy = r`` from a QR factorisation of ``W'`` (``M = W W'``).

    The triangular factor comes without squaring the conditioning, which
    is what keeps degenerate problems converging close to the optimum.
    Returns ``(None, None)`` when the factor is unusable.
    """
    try:
        W = np.hstack([blk.factor_rows(Xb, Zb) for blk, Xb, Zb in zip(blocks, X, Z)])
    except np.linalg.LinAlgError:
        return None, None
    if W.shape[1] < m or not np.all(np.isfinite(W)):
        return None, None
    R = sla.qr(W.T, mode="r", check_finite=False)[0][:m]
    d = np.abs(np.diag(R))
    if d.min() <= 1e-15 * d.max():
        return None, None

    def fac(r):
        z = sla.solve_triangular(R, r, trans="T")
        return sla.solve_triangular(R, z)

    return fac, lambda v: W @ (W.T @ v)


def solve(problem: SdpProblem, opts: IpmOptions | None = None, presolve: bool = True) -> SolverResult:
    """Solve ``problem``; with ``presolve`` linearly dependent constraints
    are removed first (their multipliers are reported as 0)."""
    opts = opts or IpmOptions()
    flip = -1.0 if problem.sense == "max" else 1.0
    C = problem.min_objective()
    b = problem.b
    m, n = problem.m, problem.n
    if n == 0:
        bad = bool(np.any(np.abs(b) > opts.feas_tol))
        status = Status.PRIMAL_INFEASIBLE if bad else Status.OPTIMAL
        return SolverResult(status, np.zeros((0, 0)), np.zeros(m), np.zeros((0, 0)), 0.0, 0.0,
                            float(np.max(np.abs(b), initial=0.0)), 0.0, 0.0, 0)
    blocks = _blocks_of(problem, C)
    if presolve and m:
        keep, mismatch = _independent_rows(blocks, b)
        if mismatch > opts.feas_tol:
            return SolverResult(Status.PRIMAL_INFEASIBLE, np.zeros((n, n)), np.zeros(m), np.zeros((n, n)),
                                math.nan, math.nan, mismatch, math.nan, math.nan, 0)
        if keep.size < m:
            sub = problem.replace(constraints=tuple(problem.constraints[i] for i in keep),
                                  rhs=tuple(problem.rhs[i] for i in keep))
            res = solve(sub, opts, presolve=False)
            y = np.zeros(m)
            y[keep] = res.y
            _, r = evaluate(problem, res.X)
            res.y = y
            res.primal_residual = float(np.max(np.abs(r)))
            return res

    def Aop(Xs):
        out = np.zeros(m)
        for blk, X in zip(blocks, Xs):
            out += blk.A(X)
        return out

    def ATop(y):
        return [blk.AT(y) for blk in blocks]

    normA = np.sqrt(sum(np.asarray(blk.Avec.multiply(blk.Avec).sum(axis=1)).ravel() for blk in blocks)) if m else np.zeros(0)
    normC = math.sqrt(sum(float(np.sum(blk.C ** 2)) for blk in blocks))
    if opts.initial_scale is not None:
        xi = eta = float(opts.initial_scale)
    else:
        xi = max(10.0, math.sqrt(n), float(np.max(n * (1 + np.abs(b)) / (1 + normA), initial=0.0)))
        eta = max(10.0, math.sqrt(n), normC, float(np.max(normA, initial=0.0)))
    # Gram matrix of the constraints, for projecting primal directions back
    # onto A(dX) = Rp when the Schur complement has lost accuracy
    gram = None
    if m:
        G = sum((blk.Avec @ blk.AvecT).toarray() for blk in blocks)
        try:
            gram = sla.cho_factor(G, lower=True)
        except np.linalg.LinAlgError:
            gram = None
    ncols = sum(blk.k if blk.lp else blk.k * blk.k for blk in blocks)
    X = [np.full(blk.k, xi) if blk.lp else xi * np.eye(blk.k) for blk in blocks]
    Z = [np.full(blk.k, eta) if blk.lp else eta * np.eye(blk.k) for blk in blocks]
    y = np.zeros(m)
    cmax = max(1.0, max((float(np.max(np.abs(blk.C), initial=0.0)) for blk in blocks), default=0.0))

    history = []
    status = Status.MAX_ITERATIONS
    stalls = 0
    it = 0
    mu_prev = math.inf
    if opts.verbose:
        print("iter\tpobj\tdobj\tgap\tpres\tdres\tmu\talpha_p\talpha_d", file=sys.stderr)

    def measures():
        Rp = b - Aop(X)
        ATy = ATop(y)
        Rd = [blk.C - Zb - a for blk, Zb, a in zip(blocks, Z, ATy)]
        pobj = sum(_inner(blk.C, Xb, blk.lp) for blk, Xb in zip(blocks, X))
        dobj = float(b @ y)
        pres = float(np.max(np.abs(Rp), initial=0.0))
        dres = max((float(np.max(np.abs(r), initial=0.0)) for r in Rd), default=0.0)
        xz = sum(_inner(Xb, Zb, blk.lp) for blk, Xb, Zb in zip(blocks, X, Z))
        return Rp, Rd, pobj, dobj, pres, dres, xz

    ap = ad = 0.0
    while True:
        Rp, Rd, pobj, dobj, pres, dres, xz = measures()
        mu = xz / n
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        history.append((it, pobj, dobj, gap, pres, dres, mu, ap, ad))
        if opts.verbose:
            print("\t".join(f"{v:.6e}" if isinstance(v, float) else str(v) for v in history[-1]), file=sys.stderr)
        if opts.debug and mu > mu_prev * (1 + 1e-12):
            raise AssertionError(f"complementarity increased at iteration {it}: {mu_prev} -> {mu}")
        mu_prev = mu
        if (
            gap <= opts.gap_tol
            and xz / (1.0 + abs(pobj)) <= opts.gap_tol
            and pres <= opts.feas_tol
            and dres <= opts.feas_tol * cmax
        ):
            status = Status.OPTIMAL
            break
        if dobj > 0 and m:
            aty_z = math.sqrt(sum(float(np.sum((blk.C - r) ** 2)) for blk, r in zip(blocks, Rd)))
            if aty_z / dobj < opts.infeas_tol:
                status = Status.PRIMAL_INFEASIBLE
                break
        if pobj < 0:
            ax = float(np.linalg.norm(b - Rp))
            if ax / -pobj < opts.infeas_tol:
                status = Status.DUAL_INFEASIBLE
                break
        if it >= opts.max_iterations:
            status = Status.MAX_ITERATIONS
            break
        if opts.deadline is not None and time.monotonic() > opts.deadline:
            raise SolverTimeout(f"deadline reached after {it} iterations")
        it += 1

        try:
            Zinv = [1.0 / Zb if blk.lp else sla.cho_solve(sla.cho_factor(Zb), np.eye(blk.k))
                    for blk, Zb in zip(blocks, Z)]
        except np.linalg.LinAlgError:
            status = Status.NUMERICAL_FAILURE
            break
        Zinv = [Zi if blk.lp else 0.5 * (Zi + Zi.T) for blk, Zi in zip(blocks, Zinv)]
        fac = Mop = None
        if m and m * ncols <= _QR_MAX_ENTRIES:
            fac, Mop = _factor_qr(blocks, X, Z, m)
        if m and fac is None:
            M = np.zeros((m, m))
            for blk, Xb, Zi in zip(blocks, X, Zinv):
                blk.schur(Xb, Zi, M)
            fac = _factor(M)
            Mop = M.__matmul__
            if fac is None:
                status = Status.NUMERICAL_FAILURE
                break
        # X Rd Z^{-1}, reused by both solves
        XRZ = [Xb * r * Zi if blk.lp else Xb @ r @ Zi for blk, Xb, r, Zi in zip(blocks, X, Rd, Zinv)]

        def direction(Rc):
            rhs = Rp - Aop(Rc) + Aop(XRZ)
            dy = fac(rhs) if m else np.zeros(m)
            tol = 1e-15 * max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
            # A(dX) - Rp equals M dy - rhs in exact arithmetic; refining dy
            # against the computed dX keeps primal feasibility near the end
            # without disturbing the complementarity equation
            for sweep in range(_REFINE_SWEEPS + 1):
                dZ = [r - a for r, a in zip(Rd, ATop(dy))]
                dX = []
                for blk, Xb, Zi, rc, dz in zip(blocks, X, Zinv, Rc, dZ):
                    if blk.lp:
                        dX.append(rc - Xb * dz * Zi)
                    else:
                        T = Xb @ dz @ Zi
                        dX.append(rc - 0.5 * (T + T.T))
                if not m:
                    break
                err = Rp - Aop(dX)
                if np.max(np.abs(err)) <= tol:
                    break
                if sweep == _REFINE_SWEEPS:
                    # M is too degenerate to close the gap: project what is
                    # left onto A(dX) = Rp through the Gram matrix of A
                    if gram is not None:
                        lam = sla.cho_solve(gram, err)
                        dX = [d + a for d, a in zip(dX, ATop(lam))]
                    break
                dy = dy + fac(err)
            return dX, dy, dZ

        def steps(dX, dZ):
            try:
                sp_ = min((_max_step(Xb, d, blk.lp) for blk, Xb, d in zip(blocks, X, dX)), default=math.inf)
                sd_ = min((_max_step(Zb, d, blk.lp) for blk, Zb, d in zip(blocks, Z, dZ)), default=math.inf)
            except np.linalg.LinAlgError:
                return None
            return min(1.0, opts.step_fraction * sp_), min(1.0, opts.step_fraction * sd_)

        dXa, dya, dZa = direction([-Xb for Xb in X])
        st = steps(dXa, dZa)
        if st is None:
            status = Status.NUMERICAL_FAILURE
            break
        ap, ad = st
        mu_aff = sum(
            _inner(Xb + ap * dx, Zb + ad * dz, blk.lp) for blk, Xb, Zb, dx, dz in zip(blocks, X, Z, dXa, dZa)
        ) / n
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

        def corrected(sigma, second_order):
            Rc = []
            for blk, Xb, Zi, dx, dz in zip(blocks, X, Zinv, dXa, dZa):
                if blk.lp:
                    Rc.append(sigma * mu * Zi - Xb - (dx * dz * Zi if second_order else 0.0))
                elif second_order:
                    T = dx @ dz @ Zi
                    Rc.append(sigma * mu * Zi - Xb - 0.5 * (T + T.T))
                else:
                    Rc.append(sigma * mu * Zi - Xb)
            dX, dy, dZ = direction(Rc)
            if not all(np.all(np.isfinite(d)) for d in dX):
                return None
            st = steps(dX, dZ)
            if st is None:
                return None
            ap, ad = st
            # keep complementarity non-increasing
            for _ in range(30):
                mu_new = sum(
                    _inner(Xb + ap * dx, Zb + ad * dz, blk.lp) for blk, Xb, Zb, dx, dz in zip(blocks, X, Z, dX, dZ)
                ) / n
                if mu_new <= mu and _centrality(blocks, X, Z, dX, dZ, ap, ad) >= NEIGHBORHOOD * mu_new:
                    break
                ap *= 0.8
                ad *= 0.8
            return dX, dy, dZ, ap, ad

        step = corrected(sigma, True)
        if step is None or min(step[3], step[4]) < 0.1:
            # short or failed step: recentre before pushing on
            retry = corrected(max(sigma, 0.5), False)
            if retry is not None and (step is None or min(retry[3], retry[4]) > min(step[3], step[4])):
                step = retry
        if step is None:
            status = Status.NUMERICAL_FAILURE
            break
        dX, dy, dZ, ap, ad = step
        X = [Xb + ap * dx for Xb, dx in zip(X, dX)]
        Z = [Zb + ad * dz for Zb, dz in zip(Z, dZ)]
        X = [Xb if blk.lp else 0.5 * (Xb + Xb.T) for blk, Xb in zip(blocks, X)]
        Z = [Zb if blk.lp else 0.5 * (Zb + Zb.T) for blk, Zb in zip(blocks, Z)]
        y = y + ad * dy
        stalls = stalls + 1 if max(ap, ad) < 1e-8 else 0
        if stalls >= 3:
            status = Status.NUMERICAL_FAILURE
            break

    Rp, Rd, pobj, dobj, pres, dres, xz = measures()
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    return SolverResult(
        status=status,
        X=_assemble(problem, X),
        y=flip * y,
        S=_assemble(problem, Z),
        pobj=flip * pobj,
        dobj=flip * dobj,
        primal_residual=pres,
        dual_residual=dres,
        gap=gap,
        iterations=it,
        history=history,
    )


STRICTNESS_THRESHOLD = 1e-7


def check_strict_feasibility(problem: SdpProblem, opts: IpmOptions | None = None,
                             threshold: float = STRICTNESS_THRESHOLD) -> tuple[bool, float]:
    """Largest ``t <= 1`` with ``A(X) = b`` and ``X - tI`` PSD.

    Solved with ``X = W + (1 - s) I``, ``W`` PSD, ``s >= 0``: minimise
    ``s`` subject to ``A_i.W - s tr(A_i) = b_i - tr(A_i)``; then ``t = 1 - s``.
    """
    n, m = problem.n, problem.m
    if n == 0:
        return False, 0.0
    N = n + 1
    traces = [A.trace() for A in problem.constraints]
    cons = []
    for A, tr in zip(problem.constraints, traces):
        cons.append(SymSparseMatrix(N, np.append(A.rows, n), np.append(A.cols, n), np.append(A.vals, -tr)))
    aux = SdpProblem(
        objective=SymSparseMatrix(N, [n], [n], [1.0]),
        constraints=tuple(cons),
        rhs=tuple(bi - tr for bi, tr in zip(problem.rhs, traces)),
        blocks=problem.blocks + (-1,),
        sense="min",
        provenance="strict feasibility check",
    )
    res = solve(aux, opts)
    if res.status is Status.PRIMAL_INFEASIBLE:
        return False, -math.inf
    if res.status is not Status.OPTIMAL:
        raise RuntimeError(f"strict-feasibility subproblem ended with {res.status.value}")
    t = 1.0 - res.pobj
    return t > threshold, t
