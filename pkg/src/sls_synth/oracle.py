"""Dense reference solution of the response-map LQG program.

Independent of the recursions in :mod:`sls_synth.riccati`: the causal blocks
of all four maps become one unknown vector, both affine identities become
equality constraints, and the weighted Frobenius objective becomes a quadratic
form.  The KKT system is factorized densely once; a small proximal
regularization copes with the redundant equality rows and is removed by
iterative refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import OracleFailed, OracleTooLarge
from .riccati import weight_dense
from .sls import ResponseMaps, StackedLtv, block_diag_seq

DEFAULT_MAX_UNKNOWNS = 2000


@dataclass
class OracleResult:
    maps: ResponseMaps
    cost: float
    n_unknowns: int
    kkt_residual: float


def _causal_entries(T, nx, nu, nr):
    """Row/column indices (in the stacked dense operator) of the free entries."""
    rx, ru = (T + 1) * nx, T * nu
    rows, cols = [], []

    def add(r_off, c_off, n, m, R, C, strict):
        for k in range(R):
            jmax = min(C - 1, k - 1 if strict else k)
            if jmax < 0:
                continue
            r = r_off + k * n + np.arange(n)
            c = c_off + np.arange((jmax + 1) * m)
            rr, cc = np.meshgrid(r, c, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())

    cw = (T + 1) * nx
    add(0, 0, nx, nx, T + 1, T + 1, False)       # xw
    add(0, cw, nx, nr, T + 1, T, True)           # xe
    add(rx, 0, nu, nx, T, T + 1, False)          # uw
    add(rx, cw, nu, nr, T, T, True)              # ue
    return np.concatenate(rows), np.concatenate(cols), rx + ru, cw + T * nr


def count_unknowns(T, nx, nu, nr) -> int:
    return len(_causal_entries(T, nx, nu, nr)[0])


def dense_kkt_oracle(ltv: StackedLtv, Q, R, P, max_unknowns: int = DEFAULT_MAX_UNKNOWNS,
                     refine_steps: int = 30) -> OracleResult:
    """Minimize the LQG objective over causal maps subject to both identities."""
    T, nx, nu, nr = ltv.T, ltv.nx, ltv.nu, ltv.nr
    rows, cols, NR, NC = _causal_entries(T, nx, nu, nr)
    n = len(rows)
    if n > max_unknowns:
        raise OracleTooLarge(f"{n} unknowns exceeds the dense oracle guard of {max_unknowns}")

    # vec() is column-major: entry (r, c) sits at c * NR + r
    S = sp.csc_matrix((np.ones(n), (cols * NR + rows, np.arange(n))), shape=(NR * NC, n))
    M, ZB, ZC = ltv.M_dense(), ltv.ZB_dense(), ltv.ZC_dense()
    Lop = sp.csr_matrix(np.hstack([M, -ZB]))
    Rop = sp.csr_matrix(np.vstack([M, -ZC]))
    left = sp.kron(sp.identity(NC, format="csr"), Lop) @ S
    right = sp.kron(Rop.T, sp.identity(NR, format="csr")) @ S
    tl = np.zeros((M.shape[0], NC))
    tl[:, :M.shape[0]] = np.eye(M.shape[0])
    tr = np.zeros((NR, M.shape[0]))
    tr[:M.shape[0]] = np.eye(M.shape[0])
    A = sp.vstack([left, right]).tocsr()
    b = np.concatenate([tl.ravel(order="F"), tr.ravel(order="F")])
    keep = np.diff(A.indptr) > 0
    if np.any(b[~keep] != 0):
        raise OracleFailed("an identity entry is unreachable by the causal pattern")
    A = A[keep].toarray()
    b = b[keep]

    W = weight_dense(Q, R, P, T)
    D = block_diag_seq([ltv.E_dense(), ltv.F_dense()])
    Hfull = sp.kron(sp.csr_matrix(D @ D.T), sp.csr_matrix(W))
    H = (S.T @ Hfull @ S).toarray()
    scale = max(np.abs(H).max(), 1.0)
    H = H / scale

    m = A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = 2.0 * H
    K[:n, n:] = A.T
    K[n:, :n] = A
    delta = 1e-9
    Kreg = K.copy()
    Kreg[:n, :n] += delta * np.eye(n)
    Kreg[n:, n:] -= delta * np.eye(m)
    rhs = np.concatenate([np.zeros(n), b])
    try:
        lu = sla.lu_factor(Kreg, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise OracleFailed(f"KKT factorization failed: {exc}") from exc
    sol = np.zeros(n + m)
    res = rhs.copy()
    for _ in range(refine_steps):
        sol = sol + sla.lu_solve(lu, res)
        res = rhs - K @ sol
        if np.abs(res).max() < 1e-13:
            break
    if not np.all(np.isfinite(sol)):
        raise OracleFailed("KKT solve produced non-finite values")
    p = sol[:n]
    dense = np.zeros((NR, NC))
    dense[rows, cols] = p
    rx, cw = (T + 1) * nx, (T + 1) * nx
    maps = ResponseMaps.from_dense(dense[:rx, :cw], dense[:rx, cw:], dense[rx:, :cw], dense[rx:, cw:], nx, nu, nr)
    cost = float(p @ H @ p) * scale
    return OracleResult(maps, cost, n, float(np.abs(res).max()))
