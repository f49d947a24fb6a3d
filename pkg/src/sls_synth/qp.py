"""Convex QP front end.

Problems are posed as ``min 1/2 x'Px + q'x  s.t.  l <= Ax <= u`` and solved by
OSQP (ADMM with solution polishing) or, for small problems that need tight
answers, by the Clarabel interior-point solver.  Only the status mapping, the
conversion to cone form and a KKT residual check live here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import clarabel
import numpy as np
import osqp
import scipy.sparse as sp

from .errors import QpInfeasible, QpMaxIter


class QpUnbounded(QpInfeasible):
    """The dual is infeasible: the objective decreases without bound."""


@dataclass
class QuadraticProgram:
    P: sp.spmatrix
    q: np.ndarray
    A: sp.spmatrix
    l: np.ndarray
    u: np.ndarray

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    polished: bool


_STATUS = {
    osqp.SolverStatus.OSQP_SOLVED: "solved",
    osqp.SolverStatus.OSQP_SOLVED_INACCURATE: "solved_inaccurate",
}


def solve_qp(qp: QuadraticProgram, eps: float = 1e-6, max_iter: int = 50000, polish: bool = True,
             warm_x: Optional[np.ndarray] = None, method: str = "osqp", **settings) -> QpSolution:
    """Solve ``qp``; raises :class:`QpInfeasible`, :class:`QpUnbounded` or :class:`QpMaxIter`.

    ``method`` is ``"osqp"`` or ``"clarabel"``.  Extra keyword arguments
    override OSQP settings (e.g. ``scaling=0``).
    """
    if method == "clarabel":
        return _solve_clarabel(qp, eps)
    if method != "osqp":
        raise ValueError(f"unknown QP method {method!r}")
    P = sp.triu(sp.csc_matrix(qp.P), format="csc")
    A = sp.csc_matrix(qp.A)
    l = np.maximum(np.asarray(qp.l, float), -1e30)
    u = np.minimum(np.asarray(qp.u, float), 1e30)
    solver = osqp.OSQP()
    opts = dict(verbose=False, eps_abs=eps, eps_rel=eps, eps_prim_inf=1e-9, eps_dual_inf=1e-9,
                max_iter=max_iter, polishing=polish, polish_refine_iter=10, scaling=10,
                adaptive_rho=True, check_termination=25)
    opts.update(settings)
    solver.setup(P, np.asarray(qp.q, float), A, l, u, **opts)
    if warm_x is not None:
        solver.warm_start(x=np.asarray(warm_x, float))
    res = solver.solve(raise_error=False)
    st = res.info.status_val
    if st in (osqp.SolverStatus.OSQP_PRIMAL_INFEASIBLE, osqp.SolverStatus.OSQP_PRIMAL_INFEASIBLE_INACCURATE):
        raise QpInfeasible("QP is primal infeasible")
    if st in (osqp.SolverStatus.OSQP_DUAL_INFEASIBLE, osqp.SolverStatus.OSQP_DUAL_INFEASIBLE_INACCURATE):
        raise QpUnbounded("QP objective is unbounded below")
    if st not in _STATUS:
        if st == osqp.SolverStatus.OSQP_MAX_ITER_REACHED:
            raise QpMaxIter(f"QP hit the iteration cap of {max_iter}")
        raise QpInfeasible(f"QP solver stopped with status {res.info.status!r}")
    return QpSolution(np.array(res.x), np.array(res.y), _STATUS[st], int(res.info.iter),
                      float(res.info.prim_res), float(res.info.dual_res), res.info.status_polish == 1)


def _solve_clarabel(qp: QuadraticProgram, eps: float) -> QpSolution:
    A = sp.csr_matrix(qp.A)
    l = np.asarray(qp.l, float)
    u = np.asarray(qp.u, float)
    eq = np.isfinite(l) & np.isfinite(u) & (l == u)
    up = np.isfinite(u) & ~eq
    lo = np.isfinite(l) & ~eq
    # cone form: A_c x + s = b_c with s = 0 on equalities and s >= 0 otherwise
    Ac = sp.vstack([A[eq], A[up], -A[lo]], format="csc")
    bc = np.concatenate([u[eq], u[up], -l[lo]])
    cones = []
    if eq.any():
        cones.append(clarabel.ZeroConeT(int(eq.sum())))
    if up.any() or lo.any():
        cones.append(clarabel.NonnegativeConeT(int(up.sum() + lo.sum())))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = min(eps, 1e-8)
    P = sp.triu(sp.csc_matrix(qp.P), format="csc")
    res = clarabel.DefaultSolver(P, np.asarray(qp.q, float), Ac, bc, cones, settings).solve()
    status = str(res.status)
    if "PrimalInfeasible" in status:
        raise QpInfeasible("QP is primal infeasible")
    if "DualInfeasible" in status:
        raise QpUnbounded("QP objective is unbounded below")
    if "MaxIterations" in status:
        raise QpMaxIter("interior-point QP hit its iteration cap")
    if status not in ("Solved", "AlmostSolved"):
        raise QpInfeasible(f"QP solver stopped with status {status!r}")
    z = np.asarray(res.z)
    # back to the two-sided multiplier convention: y > 0 on the upper bound, y < 0 on the lower
    y = np.zeros(A.shape[0])
    ne, nu_ = int(eq.sum()), int(up.sum())
    y[eq] = z[:ne]
    y[up] = z[ne:ne + nu_]
    y[lo] -= z[ne + nu_:]          # two-sided rows carry both multipliers
    x = np.asarray(res.x)
    prim, dual, _ = kkt_residuals(qp, x, y)
    return QpSolution(x, y, "solved" if status == "Solved" else "solved_inaccurate", int(res.iterations),
                      prim, dual, False)


def kkt_residuals(qp: QuadraticProgram, x, y) -> tuple[float, float, float]:
    """Primal, dual and complementarity residuals in the max norm."""
    Ax = qp.A @ x
    prim = float(np.max(np.maximum(qp.l - Ax, 0) + np.maximum(Ax - qp.u, 0), initial=0.0))
    dual = float(np.max(np.abs(qp.P @ x + qp.q + qp.A.T @ y), initial=0.0))
    yp, ym = np.maximum(y, 0), np.maximum(-y, 0)
    gap_u = yp * np.where(np.isfinite(qp.u), qp.u - Ax, 0.0)
    gap_l = ym * np.where(np.isfinite(qp.l), Ax - qp.l, 0.0)
    comp = float(np.max(np.abs(gap_u) + np.abs(gap_l), initial=0.0))
    return prim, dual, comp
