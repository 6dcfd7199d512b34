"""Primal facial reduction.

Each round searches for ``y`` with ``b.y = 0`` and ``S = sum_i y_i A_i``
PSD and nonzero. Such an ``S`` is orthogonal to every feasible ``X``, so
the feasible set lies in the face ``{X : range X in ker S}``; the problem
is rewritten over that face as ``V' C V``, ``V' A_i V`` with ``V`` an
orthonormal kernel basis. Rounds repeat until no certificate exists.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .ipm import IpmOptions, solve
from .problem import SdpProblem, Status, SymSparseMatrix, block_offsets

log = logging.getLogger(__name__)

EPS_RANK = 1e-8
EPS_PSD = 1e-9
KERNEL_TOL = 1e-6
CERT_TOL = 1e-7
DROP_TOL = 1e-10
POLISH_TOL = 1e-9


class CertificateMode(str, enum.Enum):
    DIAGONAL_LP = "DiagonalLP"
    FULL_SDP = "FullSdp"


class FacialReductionError(RuntimeError):
    """Numerical failure while searching for or applying a certificate."""


@dataclass(frozen=True)
class Certificate:
    y: np.ndarray
    S: SymSparseMatrix
    mode: CertificateMode


@dataclass(frozen=True)
class FaceStage:
    """One reduction step as a block-diagonal ``V``.

    ``bases[b]`` maps input block ``b`` (``k_in`` rows) to ``k_out``
    columns; blocks with ``k_out = 0`` disappear from ``blocks_out``.
    """

    blocks_in: tuple[int, ...]
    bases: tuple[np.ndarray, ...]
    dropped: tuple[int, ...] = ()

    @property
    def blocks_out(self) -> tuple[int, ...]:
        out = []
        for size, V in zip(self.blocks_in, self.bases):
            k = V.shape[1]
            if k:
                out.append(-k if size < 0 else k)
        return tuple(out)

    @property
    def n_in(self) -> int:
        return int(sum(abs(b) for b in self.blocks_in))

    @property
    def n_out(self) -> int:
        return int(sum(V.shape[1] for V in self.bases))

    def dense(self) -> np.ndarray:
        V = np.zeros((self.n_in, self.n_out))
        r = c = 0
        for B in self.bases:
            V[r:r + B.shape[0], c:c + B.shape[1]] = B
            r += B.shape[0]
            c += B.shape[1]
        return V


@dataclass
class FaceTransform:
    original_blocks: tuple[int, ...]
    stages: list[FaceStage] = field(default_factory=list)
    kept_constraints: list[int] = field(default_factory=list)

    @property
    def original_n(self) -> int:
        return int(sum(abs(b) for b in self.original_blocks))

    @property
    def final_blocks(self) -> tuple[int, ...]:
        return self.stages[-1].blocks_out if self.stages else self.original_blocks

    @property
    def final_n(self) -> int:
        return int(sum(abs(b) for b in self.final_blocks))

    def dims(self) -> list[int]:
        return [self.original_n] + [s.n_out for s in self.stages]

    def total(self) -> np.ndarray:
        V = np.eye(self.original_n)
        for s in self.stages:
            V = V @ s.dense()
        return V

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "twostep-face-transform",
                "version": 1,
                "original_blocks": list(self.original_blocks),
                "kept_constraints": list(self.kept_constraints),
                "stages": [
                    {
                        "blocks_in": list(s.blocks_in),
                        "blocks_out": list(s.blocks_out),
                        "dropped": list(s.dropped),
                        "bases": [{"shape": list(B.shape), "data": B.ravel().tolist()} for B in s.bases],
                    }
                    for s in self.stages
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "FaceTransform":
        d = json.loads(text)
        if d.get("format") != "twostep-face-transform":
            raise ValueError("not a face transform sidecar")
        stages = []
        for s in d["stages"]:
            bases = tuple(np.asarray(B["data"], float).reshape(B["shape"]) for B in s["bases"])
            stages.append(FaceStage(tuple(s["blocks_in"]), bases, tuple(s["dropped"])))
        return cls(tuple(d["original_blocks"]), stages, list(d["kept_constraints"]))


@dataclass
class ProjectionResult:
    problem: SdpProblem
    kept: list[int]
    infeasible_constraint: int | None = None
    dropped: list[int] = field(default_factory=list)

    @property
    def infeasible(self) -> bool:
        return self.infeasible_constraint is not None


@dataclass
class FaceReduction:
    reduced: SdpProblem
    transform: FaceTransform
    iterations: int
    infeasible: bool = False
    certificates: list[Certificate] = field(default_factory=list)


# -- helpers -------------------------------------------------------------------

def _block_dense(A: SymSparseMatrix, lo: int, hi: int) -> np.ndarray:
    sel = (A.rows >= lo) & (A.rows < hi)
    k = hi - lo
    D = np.zeros((k, k))
    r, c, v = A.rows[sel] - lo, A.cols[sel] - lo, A.vals[sel]
    D[r, c] = v
    D[c, r] = v
    return D


def _combine(problem: SdpProblem, y) -> list[np.ndarray]:
    """Per-block dense ``sum_i y_i A_i``."""
    offs = problem.offsets()
    out = [np.zeros((abs(b), abs(b))) for b in problem.blocks]
    blk_of = np.repeat(np.arange(len(problem.blocks)), [abs(b) for b in problem.blocks])
    for yi, A in zip(y, problem.constraints):
        if yi == 0.0 or A.nnz == 0:
            continue
        bs = blk_of[A.rows]
        for b in np.unique(bs):
            sel = bs == b
            r, c = A.rows[sel] - offs[b], A.cols[sel] - offs[b]
            np.add.at(out[b], (r, c), yi * A.vals[sel])
            off = r != c
            np.add.at(out[b], (c[off], r[off]), yi * A.vals[sel][off])
    return out


def _from_blocks(parts, blocks) -> SymSparseMatrix:
    n = int(sum(abs(b) for b in blocks))
    offs = block_offsets(blocks)
    scale = max((float(np.max(np.abs(P), initial=0.0)) for P in parts), default=0.0)
    rows, cols, vals = [], [], []
    for b, P in enumerate(parts):
        k = P.shape[0]
        iu, ju = np.triu_indices(k)
        v = P[iu, ju]
        keep = np.abs(v) > 1e-15 * scale
        if blocks[b] < 0:
            keep &= iu == ju
        rows.append(iu[keep] + offs[b])
        cols.append(ju[keep] + offs[b])
        vals.append(v[keep])
    if not rows:
        return SymSparseMatrix(n)
    return SymSparseMatrix(n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def _spectra(parts):
    return [np.linalg.eigh(0.5 * (P + P.T)) for P in parts]


def certificate_defect(problem: SdpProblem, y) -> dict:
    """Dense re-check of ``y``: smallest eigenvalue, ``b.y``, norm of ``S``."""
    parts = _combine(problem, np.asarray(y, float))
    lam = np.concatenate([np.linalg.eigvalsh(P) for P in parts]) if parts else np.zeros(0)
    norm = float(np.max(np.abs(lam), initial=0.0))
    return {"lambda_min": float(np.min(lam, initial=0.0)), "by": float(problem.b @ y), "norm": norm}


def _kernel_equations(problem: SdpProblem, parts, specs, thr: float):
    """Rows of ``y -> K_b' S_b(y) K_b`` (upper triangles) for kernel estimates ``K_b``.

    The compressed form is used instead of ``S K``: a kernel estimate off by
    an angle ``d`` leaves the true certificate with an ``O(d^2)`` residual
    here rather than ``O(d)``, so alternating refinement converges fast.
    """
    kernels = []
    for (w, Q), size, P in zip(specs, problem.blocks, parts):
        if size < 0 or np.max(np.abs(P - np.diag(np.diag(P))), initial=0.0) == 0.0:
            kernels.append(np.eye(P.shape[0])[:, np.diag(P) < thr])
        else:
            kernels.append(Q[:, w < thr])
    offs = problem.offsets()
    cols = []
    for A in problem.constraints:
        pieces = []
        for b, K in enumerate(kernels):
            k = K.shape[1]
            if k:
                Ab = _block_dense(A, int(offs[b]), int(offs[b + 1]))
                pieces.append((K.T @ Ab @ K)[np.triu_indices(k)])
        cols.append(np.concatenate(pieces) if pieces else np.zeros(0))
    return np.array(cols).T.reshape(-1, problem.m)


_NEWTON_MAX_ENTRIES = 4_000_000


def _face_newton(problem: SdpProblem, y: np.ndarray, r: int, iters: int = 30):
    """Gauss-Newton refinement of a certificate together with its face.

    When the kernel of ``S`` is exactly the range of the feasible points,
    ``lambda_min`` is flat to first order along ``b.y = 0`` and the kernel
    equations alone pin ``y`` only to the square root of their residual.
    Adding primal feasibility on the face, ``A(K M K') = b``, makes the root
    regular. Unknowns are ``y``, a rotation ``K <- K + P Z`` of each kernel
    basis and the face matrix ``M``. Returns ``None`` without convergence.
    """
    m = problem.m
    offs = problem.offsets()
    nb = len(problem.blocks)
    dense = [[_block_dense(A, int(offs[b]), int(offs[b + 1])) for A in problem.constraints] for b in range(nb)]
    parts = _combine(problem, y)
    specs = _spectra(parts)
    lam = np.sort(np.concatenate([w for w, _ in specs]))[::-1]
    thr = 0.5 * (lam[r - 1] + lam[r]) if r < lam.size else math.inf
    lp = [size < 0 for size in problem.blocks]
    K, P = [], []
    for b, (w, Q) in enumerate(specs):
        if lp[b]:
            sel = np.diag(parts[b]) < thr
            K.append(np.flatnonzero(sel))
            P.append(None)
        else:
            K.append(Q[:, w < thr])
            P.append(Q[:, w >= thr])
    ks = [len(Kb) if lp[b] else Kb.shape[1] for b, Kb in enumerate(K)]
    nz = [0 if lp[b] else P[b].shape[1] * ks[b] for b in range(nb)]
    nm = [ks[b] if lp[b] else ks[b] * (ks[b] + 1) // 2 for b in range(nb)]
    nrow = sum(ks[b] if lp[b] else abs(problem.blocks[b]) * ks[b] for b in range(nb)) + m + 2
    ncol = m + sum(nz) + sum(nm)
    if nrow * ncol > _NEWTON_MAX_ENTRIES or sum(ks) == 0:
        return None
    traces = np.array([A.trace() for A in problem.constraints])
    b_vec = problem.b
    amax = max((A.max_abs() for A in problem.constraints), default=1.0)

    def m_columns(b):
        """Columns of ``M_b -> A(K M K')`` for the chosen parametrisation of ``M_b``."""
        if lp[b]:
            return np.array([np.diag(D)[K[b]] for D in dense[b]]).reshape(m, -1)
        iu, ju = np.triu_indices(ks[b])
        mult = np.where(iu == ju, 1.0, 2.0)
        return np.array([(K[b].T @ D @ K[b])[iu, ju] * mult for D in dense[b]]).reshape(m, -1)

    def m_matrix(b, v):
        if lp[b]:
            return v
        M = np.zeros((ks[b], ks[b]))
        M[np.triu_indices(ks[b])] = v
        return M + np.triu(M, 1).T

    # initial face matrix from least squares
    Jm = np.hstack([m_columns(b) for b in range(nb)])
    mv, *_ = np.linalg.lstsq(Jm, b_vec, rcond=None)
    M = []
    pos = 0
    for b in range(nb):
        M.append(m_matrix(b, mv[pos:pos + nm[b]]))
        pos += nm[b]

    def residual_and_jacobian(y, M):
        parts = _combine(problem, y)
        F, rows = [], []
        for b in range(nb):
            if not ks[b]:
                continue
            if lp[b]:
                F.append(np.diag(parts[b])[K[b]])
                blockJ = np.zeros((ks[b], ncol))
                blockJ[:, :m] = np.array([np.diag(D)[K[b]] for D in dense[b]]).T
                rows.append(blockJ)
                continue
            s_b = parts[b].shape[0]
            F.append((parts[b] @ K[b]).ravel())
            blockJ = np.zeros((s_b * ks[b], ncol))
            blockJ[:, :m] = np.array([(D @ K[b]).ravel() for D in dense[b]]).T
            SP = parts[b] @ P[b]
            c0 = m + sum(nz[:b])
            for p_ in range(P[b].shape[1]):
                for q in range(ks[b]):
                    col = np.zeros((s_b, ks[b]))
                    col[:, q] = SP[:, p_]
                    blockJ[:, c0 + p_ * ks[b] + q] = col.ravel()
            rows.append(blockJ)
        # primal feasibility on the face
        E2 = -b_vec.copy()
        J2 = np.zeros((m, ncol))
        c_m = m + sum(nz)
        for b in range(nb):
            if not ks[b]:
                continue
            if lp[b]:
                E2 += np.array([np.diag(D)[K[b]] @ M[b] for D in dense[b]])
            else:
                X = K[b] @ M[b] @ K[b].T
                E2 += np.array([np.sum(D * X) for D in dense[b]])
                c0 = m + sum(nz[:b])
                KM = K[b] @ M[b]
                J2[:, c0:c0 + nz[b]] = np.array([2.0 * (P[b].T @ D @ KM).ravel() for D in dense[b]])
            J2[:, c_m + sum(nm[:b]):c_m + sum(nm[:b + 1])] = m_columns(b)
        F.append(E2)
        rows.append(J2)
        F.append(np.array([traces @ y - 1.0, b_vec @ y]))
        J3 = np.zeros((2, ncol))
        J3[0, :m] = traces
        J3[1, :m] = b_vec
        rows.append(J3)
        return np.concatenate(F), np.vstack(rows)

    def size(F, y):
        return float(np.max(np.abs(F))) / (max(1.0, amax) * max(1.0, float(np.max(np.abs(y)))))

    F, J = residual_and_jacobian(y, M)
    best, best_size = None, size(F, y)
    for _ in range(iters):
        d, *_ = np.linalg.lstsq(J, -F, rcond=None)
        y = y + d[:m]
        pos = m
        for b in range(nb):
            dz = d[pos:pos + nz[b]]
            pos += nz[b]
            if lp[b] or not ks[b]:
                continue
            Knew, R = np.linalg.qr(K[b] + P[b] @ dz.reshape(P[b].shape[1], ks[b]))
            K[b] = Knew
            P[b] = sla.null_space(Knew.T) if P[b].shape[1] else P[b]
            M[b] = R @ M[b] @ R.T
        for b in range(nb):
            M[b] = M[b] + m_matrix(b, d[pos:pos + nm[b]])
            pos += nm[b]
        F, J = residual_and_jacobian(y, M)
        cur = size(F, y)
        if cur >= best_size * 0.9 and best is not None:
            break
        if cur < best_size:
            best, best_size = y.copy(), cur
        if cur <= 1e-15:
            break
    return best if best is not None and best_size <= 1e-12 else None


def _polish(problem: SdpProblem, y0: np.ndarray, tol: float = KERNEL_TOL, eps_psd: float = EPS_PSD,
            max_refine: int = 40):
    """Nearest ``y`` to ``y0`` with ``b.y = 0``, unit trace and an exact kernel.

    Interior-point iterates leave small but nonzero eigenvalues on
    directions that only vanish in the limit, so candidate ranks are tried
    from the largest plausible one (eigenvalues above ``tol`` relative)
    downwards. For each rank the kernel estimate and the least-squares
    correction are alternated until the linear system is met to roundoff;
    the first rank that also yields a PSD ``S`` wins. Returns ``None`` when
    no rank works.
    """
    lam0 = np.sort(np.concatenate([np.linalg.eigvalsh(P) for P in _combine(problem, y0)]))[::-1]
    if lam0.size == 0 or lam0[0] <= 0:
        return None
    traces = np.array([A.trace() for A in problem.constraints])
    base = np.vstack([problem.b[None, :], traces[None, :]])
    r_max = int(np.sum(lam0 > tol * lam0[0]))
    for r in range(r_max, 0, -1):
        y = y0
        best, best_resid = None, math.inf
        for _ in range(max_refine):
            parts = _combine(problem, y)
            specs = _spectra(parts)
            lam = np.sort(np.concatenate([w for w, _ in specs]))[::-1]
            if r < lam.size and lam[r - 1] <= lam[r]:
                break
            thr = 0.5 * (lam[r - 1] + lam[r]) if r < lam.size else math.inf
            G = np.vstack([base, _kernel_equations(problem, parts, specs, thr)])
            rhs = np.zeros(G.shape[0])
            rhs[1] = 1.0
            delta, *_ = np.linalg.lstsq(G, rhs - G @ y, rcond=None)
            y = y + delta
            scale = max(1.0, float(np.max(np.abs(G), initial=0.0))) * max(1.0, float(np.max(np.abs(y))))
            resid = float(np.max(np.abs(G @ y - rhs), initial=0.0)) / scale
            if resid >= 0.5 * best_resid:
                if resid < best_resid:
                    best, best_resid = y, resid
                break
            best, best_resid = y, resid
            if resid <= 1e-14:
                break
        if best is not None and best_resid <= POLISH_TOL:
            lam = np.sort(np.concatenate([np.linalg.eigvalsh(P) for P in _combine(problem, best)]))[::-1]
            # kernel eigenvalues must be negligible against the smallest
            # range eigenvalue, not merely against the largest one
            if lam[r - 1] > EPS_RANK * lam[0] and np.max(np.abs(lam[r:]), initial=0.0) <= eps_psd * lam[r - 1]:
                better = _face_newton(problem, best, r)
                return best if better is None else better
    return None


def _positions(problem: SdpProblem):
    keys = sorted({(i, j) for A in problem.constraints for i, j in zip(A.rows.tolist(), A.cols.tolist())})
    index = {k: p for p, k in enumerate(keys)}
    Amat = np.zeros((problem.m, len(keys)))
    for i, A in enumerate(problem.constraints):
        for r, c, v in A.items():
            Amat[i, index[(r, c)]] = v
    return keys, Amat


def _diagonal_lp(problem: SdpProblem):
    keys, Amat = _positions(problem)
    m = problem.m
    diag = np.array([r == c for r, c in keys], dtype=bool)
    traces = Amat[:, diag].sum(axis=1)
    A_eq = np.vstack([problem.b[None, :], Amat[:, ~diag].T, traces[None, :]])
    b_eq = np.zeros(A_eq.shape[0])
    b_eq[-1] = 1.0
    A_ub = -Amat[:, diag].T
    res = linprog(np.zeros(m), A_ub=A_ub if A_ub.size else None, b_ub=np.zeros(A_ub.shape[0]) if A_ub.size else None,
                  A_eq=A_eq, b_eq=b_eq, bounds=[(None, None)] * m, method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise FacialReductionError(f"diagonal certificate LP failed: {res.message}")
    return res.x


def _full_sdp(problem: SdpProblem, opts: IpmOptions | None):
    keys, Amat = _positions(problem)
    m = problem.m
    # isometric vectorisation: off-diagonal entries count twice in A . B
    w = np.array([1.0 if r == c else math.sqrt(2.0) for r, c in keys])
    b = problem.b
    N = sla.null_space(b[None, :]) if np.any(b != 0) else np.eye(m)
    if N.shape[1] == 0:
        return None
    K = N.T @ (Amat * w)
    U, sig, _ = np.linalg.svd(K, full_matrices=False)
    if sig.size == 0:
        return None
    # relative to the data, not to sig[0]: when b.y = 0 forces the span to
    # vanish, what is left is rounding noise and must not be normalised up
    keep = sig > 1e-10 * float(np.linalg.norm(Amat * w, 2))
    if not keep.any():
        return None
    Y = N @ U[:, keep]  # y-coefficients of an orthonormal basis of the span
    diag = np.array([r == c for r, c in keys], dtype=bool)
    tau = (Y.T @ Amat)[:, diag].sum(axis=1)
    if np.linalg.norm(tau) <= 1e-12 * sig[0]:
        return None
    z0 = tau / (tau @ tau)
    Mnull = sla.null_space(tau[None, :])
    y_base = Y @ z0
    Y_dirs = Y @ Mnull
    n = problem.n

    def combo(yv):
        return _from_blocks(_combine(problem, yv), problem.blocks)

    eye = SymSparseMatrix(n, range(n), range(n), np.ones(n))
    aux = SdpProblem(
        objective=combo(y_base),
        constraints=tuple(combo(Y_dirs[:, k]) for k in range(Y_dirs.shape[1])) + (eye,),
        rhs=(0.0,) * Y_dirs.shape[1] + (1.0,),
        blocks=problem.blocks,
        provenance="certificate search",
    )
    res = solve(aux, opts)
    if res.status is not Status.OPTIMAL:
        raise FacialReductionError(f"certificate subproblem ended with {res.status.value}")
    t = res.dobj
    log.debug("certificate search: max lambda_min = %.3e", t)
    if t < -CERT_TOL:
        return None
    return y_base - Y_dirs @ res.y[:-1]


def find_certificate(problem: SdpProblem, mode=CertificateMode.DIAGONAL_LP, opts: IpmOptions | None = None,
                     kernel_tol: float = KERNEL_TOL, eps_psd: float = EPS_PSD) -> Certificate | None:
    """Search for a reducing certificate, or return ``None``.

    ``DiagonalLP`` restricts ``S`` to be diagonal (a linear program), so
    ``None`` there is inconclusive. ``FullSdp`` solves an auxiliary SDP
    maximising ``lambda_min(S)`` over unit-trace ``S`` in the span with
    ``b.y = 0``; ``None`` there means the problem is strictly feasible up
    to solver tolerance.
    """
    mode = CertificateMode(mode)
    if problem.m == 0 or problem.n == 0:
        return None
    y0 = _diagonal_lp(problem) if mode is CertificateMode.DIAGONAL_LP else _full_sdp(problem, opts)
    if y0 is None:
        return None
    y = _polish(problem, np.asarray(y0, float), kernel_tol, eps_psd)
    if y is None:
        log.debug("certificate candidate rejected after polishing")
        return None
    S = _from_blocks(_combine(problem, y), problem.blocks)
    return Certificate(y=y, S=S, mode=mode)


def face_basis(S, eps_rank: float = EPS_RANK, eps_psd: float = EPS_PSD) -> tuple[np.ndarray, int]:
    """Kernel basis ``V`` of a PSD ``S`` and its rank ``r``."""
    S = S.to_dense() if isinstance(S, SymSparseMatrix) else np.asarray(S, float)
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    scale = float(np.max(np.abs(w), initial=0.0))
    if scale <= 1e-300:
        raise FacialReductionError("certificate matrix is numerically zero")
    if w[0] < -eps_psd * scale:
        raise FacialReductionError(f"certificate matrix is indefinite (lambda_min = {w[0]:.3e})")
    r = int(np.sum(w > eps_rank * w[-1]))
    return Q[:, : S.shape[0] - r], r


def face_stage(S: SymSparseMatrix, blocks, eps_rank: float = EPS_RANK, eps_psd: float = EPS_PSD) -> tuple[FaceStage, int]:
    """Block-wise :func:`face_basis` with one global rank threshold.

    Diagonal blocks, and dense blocks whose part of ``S`` is diagonal, keep
    coordinate vectors so sparsity survives the projection.
    """
    offs = block_offsets(blocks)
    parts = [_block_dense(S, int(offs[b]), int(offs[b + 1])) for b in range(len(blocks))]
    specs = [np.linalg.eigh(P) for P in parts]
    lam = np.concatenate([w for w, _ in specs]) if specs else np.zeros(0)
    scale = float(np.max(np.abs(lam), initial=0.0))
    if scale <= 1e-300:
        raise FacialReductionError("certificate matrix is numerically zero")
    if lam.min() < -eps_psd * scale:
        raise FacialReductionError(f"certificate matrix is indefinite (lambda_min = {lam.min():.3e})")
    thr = eps_rank * lam.max()
    bases = []
    r = 0
    for size, P, (w, Q) in zip(blocks, parts, specs):
        offdiag = P - np.diag(np.diag(P))
        if size < 0 or np.max(np.abs(offdiag), initial=0.0) <= 1e-14 * scale:
            idx = np.flatnonzero(np.diag(P) <= thr)
            V = np.eye(P.shape[0])[:, idx]
        else:
            V = Q[:, w <= thr]
        r += P.shape[0] - V.shape[1]
        bases.append(V)
    return FaceStage(tuple(blocks), tuple(bases)), r


def project(problem: SdpProblem, V) -> ProjectionResult:
    """Rewrite ``problem`` over the face ``V S V'``.

    ``V`` is a :class:`FaceStage` or, for a single-block problem, a dense
    column-orthonormal matrix. Constraints whose reduced matrix vanishes
    are dropped when ``b_i = 0``; with ``b_i != 0`` the result is flagged
    infeasible.
    """
    if not isinstance(V, FaceStage):
        V = np.asarray(V, float)
        if len(problem.blocks) != 1:
            raise ValueError("dense V needs a single-block problem; pass a FaceStage")
        V = FaceStage(problem.blocks, (V,))
    if V.blocks_in != problem.blocks:
        raise ValueError("stage block structure does not match the problem")
    offs = problem.offsets()
    blocks_out = V.blocks_out
    live = [b for b, B in enumerate(V.bases) if B.shape[1]]

    def reduce(A: SymSparseMatrix) -> tuple[SymSparseMatrix, float]:
        parts = []
        for b in live:
            B = V.bases[b]
            Ab = _block_dense(A, int(offs[b]), int(offs[b + 1]))
            parts.append(B.T @ Ab @ B)
        R = _from_blocks(parts, blocks_out)
        return R, R.max_abs()

    C, _ = reduce(problem.objective)
    kept, cons, rhs = [], [], []
    infeasible = None
    dropped = []
    for i, (A, bi) in enumerate(zip(problem.constraints, problem.rhs)):
        R, size = reduce(A)
        if size <= DROP_TOL * max(A.max_abs(), 1e-300):
            if bi == 0.0:
                dropped.append(i)
                continue
            if infeasible is None:
                infeasible = i
        kept.append(i)
        cons.append(R)
        rhs.append(bi)
    reduced = SdpProblem(C, tuple(cons), tuple(rhs), blocks_out, problem.sense,
                         (problem.provenance + " [face]").strip())
    return ProjectionResult(reduced, kept, infeasible, dropped)


def reduce_loop(problem: SdpProblem, mode=CertificateMode.DIAGONAL_LP, eps_rank: float = EPS_RANK,
                opts: IpmOptions | None = None) -> FaceReduction:
    """Repeat certificate search, face basis and projection until none is found."""
    mode = CertificateMode(mode)
    transform = FaceTransform(problem.blocks, [], list(range(problem.m)))
    current = problem
    certs = []
    iterations = 0
    while True:
        cert = find_certificate(current, mode, opts)
        if cert is None:
            break
        stage, r = face_stage(cert.S, current.blocks, eps_rank)
        assert r >= 1, "certificate exposed no direction"
        pr = project(current, stage)
        stage = replace(stage, dropped=tuple(pr.dropped))
        iterations += 1
        assert iterations <= problem.n, "facial reduction exceeded n rounds"
        certs.append(cert)
        transform.stages.append(stage)
        transform.kept_constraints = [transform.kept_constraints[i] for i in pr.kept]
        current = pr.problem
        if pr.infeasible:
            return FaceReduction(current, transform, iterations, True, certs)
        if current.n == 0:
            break
    return FaceReduction(current, transform, iterations, False, certs)


def lift_solution(X_reduced, transform: FaceTransform) -> np.ndarray:
    """``V_total X V_total'`` back to the original dimension."""
    X = np.asarray(X_reduced, float)
    if X.shape != (transform.final_n, transform.final_n):
        raise ValueError(f"X has shape {X.shape}, expected ({transform.final_n}, {transform.final_n})")
    for stage in reversed(transform.stages):
        V = stage.dense()
        X = V @ X @ V.T
    return 0.5 * (X + X.T)
