"""Structured solver for the output-feedback LQG problem over response maps.

The optimal maps come from two independent recursions: a backward control
Riccati recursion in the weights ``(Q, R, P)`` and a forward Kalman covariance
recursion in the noise scalings ``(Xi, E, F)``.  Forward passes turn each into
a pair of block operators and :func:`assemble` combines them.

Kalman gains follow the sign convention ``L_{j+1} = -(F F' + C Pi C')^{-1} C Pi A'``,
so the estimation error evolves with ``A_j + L_{j+1}' C_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import KalmanSingular, RiccatiSingular
from .sls import ResponseMaps, StackedLtv, block_diag_seq, blocks_to_dense

# (j) -> (Q_seq (T, nx, nx), R_seq (T, nu, nu), P (nx, nx)) for column j
ColumnWeights = Callable[[int], tuple]


@dataclass
class ControlRecursion:
    """Riccati cost-to-go ``S`` and gains ``K``.

    Shared form: ``S`` is ``(T+1, nx, nx)`` and ``K`` is ``(T, nu, nx)``.
    Per-column form adds a leading column axis: ``(T+1, T+1, ...)`` indexed
    ``[j, k]``.
    """

    S: np.ndarray
    K: np.ndarray

    @property
    def per_column(self) -> bool:
        return self.K.ndim == 4


@dataclass
class KalmanRecursion:
    """Error covariances ``Pi_0..Pi_T`` and gains ``L_1..L_T``.

    ``L[0]`` is unused padding so that ``L[j]`` is the gain that consumes
    measurement ``dy_j``.
    """

    Pi: np.ndarray  # (T+1, nx, nx)
    L: np.ndarray   # (T+1, nr, nx)


@dataclass
class PropagationOps:
    """State-feedback responses (``xbar``, ``ubar``) and observer responses (``xhat``, ``yhat``)."""

    xbar: np.ndarray  # (T+1, T+1, nx, nx)
    ubar: np.ndarray  # (T,   T+1, nu, nx)
    xhat: np.ndarray  # (T+1, T+1, nx, nx)
    yhat: np.ndarray  # (T+1, T,   nx, nr)


def _stage_weights(Q, R, T, nx, nu):
    Q = np.asarray(Q, float)
    R = np.asarray(R, float)
    Qs = np.broadcast_to(Q, (T, nx, nx)) if Q.ndim == 2 else Q
    Rs = np.broadcast_to(R, (T, nu, nu)) if R.ndim == 2 else R
    return Qs, Rs


def _riccati_sweep(ltv: StackedLtv, Qs, Rs, P):
    T = ltv.T
    S = np.empty((T + 1, ltv.nx, ltv.nx))
    K = np.empty((T, ltv.nu, ltv.nx))
    S[T] = P
    for k in range(T - 1, -1, -1):
        A, B, Sn = ltv.A[k], ltv.B[k], S[k + 1]
        SB = Sn @ B
        H = Rs[k] + B.T @ SB
        try:
            c, low = _chol(H)
        except np.linalg.LinAlgError:
            raise RiccatiSingular(f"R + B'SB is not positive definite at k={k}") from None
        K[k] = -_chol_solve(c, low, SB.T @ A)
        S[k] = Qs[k] + A.T @ Sn @ A + (A.T @ SB) @ K[k]
        S[k] = 0.5 * (S[k] + S[k].T)
        if not np.all(np.isfinite(S[k])):
            raise RiccatiSingular(f"non-finite cost-to-go at k={k}")
    return S, K


def _chol(H):
    return cho_factor(H, lower=True)


def _chol_solve(c, low, rhs):
    return cho_solve((c, low), rhs)


def backward_control(ltv: StackedLtv, Q, R, P, column_weights: Optional[ColumnWeights] = None) -> ControlRecursion:
    """Backward Riccati recursion for the state-feedback gains.

    ``Q`` and ``R`` may be single matrices or per-step stacks.  When
    ``column_weights`` is given, the recursion is rerun once per column ``j``
    with the weights it returns, producing per-column gains ``K_{k,j}``.
    """
    T, nx, nu = ltv.T, ltv.nx, ltv.nu
    if column_weights is None:
        Qs, Rs = _stage_weights(Q, R, T, nx, nu)
        S, K = _riccati_sweep(ltv, Qs, Rs, np.asarray(P, float))
        return ControlRecursion(S, K)
    S = np.empty((T + 1, T + 1, nx, nx))
    K = np.empty((T + 1, T, nu, nx))
    for j in range(T + 1):
        Qj, Rj, Pj = column_weights(j)
        Qs, Rs = _stage_weights(Qj, Rj, T, nx, nu)
        S[j], K[j] = _riccati_sweep(ltv, Qs, Rs, np.asarray(Pj, float))
    return ControlRecursion(S, K)


def backward_kalman(ltv: StackedLtv) -> KalmanRecursion:
    """Kalman covariance recursion, started from ``Pi_0 = Xi Xi'``.

    It runs forward in time; the name mirrors :func:`backward_control`, whose
    dual it is.
    """
    T, nx, nr = ltv.T, ltv.nx, ltv.nr
    Pi = np.empty((T + 1, nx, nx))
    L = np.zeros((T + 1, nr, nx))
    Pi[0] = ltv.Xi @ ltv.Xi.T
    for j in range(T):
        A, C, F, E = ltv.A[j], ltv.C[j], ltv.F[j], ltv.E[j]
        Sy = F @ F.T + C @ Pi[j] @ C.T
        try:
            c, low = _chol(Sy)
        except np.linalg.LinAlgError:
            raise KalmanSingular(f"innovation covariance F F' + C Pi C' is singular at j={j}") from None
        L[j + 1] = -_chol_solve(c, low, C @ Pi[j] @ A.T)
        Pi[j + 1] = E @ E.T + A @ Pi[j] @ A.T + (A @ Pi[j] @ C.T) @ L[j + 1]
        Pi[j + 1] = 0.5 * (Pi[j + 1] + Pi[j + 1].T)
        if not np.all(np.isfinite(Pi[j + 1])):
            raise KalmanSingular(f"non-finite covariance at j={j + 1}")
    return KalmanRecursion(Pi, L)


def forward_passes(ltv: StackedLtv, ctrl: ControlRecursion, kal: KalmanRecursion) -> PropagationOps:
    """Closed-loop state-feedback responses and observer-error responses."""
    T, nx, nu, nr = ltv.T, ltv.nx, ltv.nu, ltv.nr
    xbar = np.zeros((T + 1, T + 1, nx, nx))
    ubar = np.zeros((T, T + 1, nu, nx))
    idx = np.arange(T + 1)
    xbar[idx, idx] = np.eye(nx)
    if ctrl.per_column:
        Kkj = ctrl.K.transpose(1, 0, 2, 3)  # [k, j]
        for k in range(T):
            Kk = Kkj[k, :k + 1]
            ubar[k, :k + 1] = Kk @ xbar[k, :k + 1]
            xbar[k + 1, :k + 1] = (ltv.A[k] + ltv.B[k] @ Kk) @ xbar[k, :k + 1]
    else:
        for k in range(T):
            ubar[k, :k + 1] = ctrl.K[k] @ xbar[k, :k + 1]
            xbar[k + 1, :k + 1] = (ltv.A[k] + ltv.B[k] @ ctrl.K[k]) @ xbar[k, :k + 1]

    xhat = np.zeros((T + 1, T + 1, nx, nx))
    yhat = np.zeros((T + 1, T, nx, nr))
    xhat[idx, idx] = np.eye(nx)
    for j in range(T - 1, -1, -1):
        rows = slice(j + 1, T + 1)
        Lt = kal.L[j + 1].T
        yhat[rows, j] = xhat[rows, j + 1] @ Lt
        xhat[rows, j] = xhat[rows, j + 1] @ (ltv.A[j] + Lt @ ltv.C[j])
    return PropagationOps(xbar, ubar, xhat, yhat)


def assemble(ltv: StackedLtv, ops: PropagationOps) -> ResponseMaps:
    """Combine the two operator pairs into maps satisfying both identities."""
    nx, nu, nr = ltv.nx, ltv.nu, ltv.nr
    M = ltv.M_dense()
    Xb, Ub = blocks_to_dense(ops.xbar), blocks_to_dense(ops.ubar)
    Xh, Yh = blocks_to_dense(ops.xhat), blocks_to_dense(ops.yhat)
    MXh = M @ Xh
    MYh = M @ Yh
    I = np.eye(M.shape[0])
    xw = Xb + Xh - Xb @ MXh
    uw = Ub @ (I - MXh)
    xe = Yh - Xb @ MYh
    ue = -Ub @ MYh
    return ResponseMaps.from_dense(xw, xe, uw, ue, nx, nu, nr)


def weight_dense(Q, R, P, T: int) -> np.ndarray:
    """``blkdiag(Q x T, P, R x T)`` acting on stacked ``(dx_0..dx_T, du_0..du_{T-1})``."""

    nx = np.asarray(P).shape[0]
    nu = np.asarray(R).shape[-1]
    Qs, Rs = _stage_weights(Q, R, T, nx, nu)
    return block_diag_seq([*Qs, np.asarray(P, float), *Rs])


def lqg_cost(maps: ResponseMaps, ltv: StackedLtv, Q, R, P) -> float:
    """``|| W^{1/2} Phi blkdiag(E, F) ||_F^2`` with ``W = blkdiag(Q.., P, R..)``."""

    W = weight_dense(Q, R, P, ltv.T)
    D = block_diag_seq([ltv.E_dense(), ltv.F_dense()])
    PhiD = maps.dense() @ D
    return float(np.einsum("ij,ij->", PhiD, W @ PhiD))


def column_cost_weights(maps: ResponseMaps, Q, R, P) -> np.ndarray:
    """``|| W^{1/2} Phi_e[:, j] ||_F^2`` for each noise column ``j`` (unscaled).

    With ``F_j = b_j I`` the tube cost carries ``b_j^2`` times these numbers.
    """
    T = maps.T
    W = weight_dense(Q, R, P, T)
    nr = maps.nr
    Phie = np.vstack([blocks_to_dense(maps.xe), blocks_to_dense(maps.ue)])
    G = np.einsum("ij,ij->j", Phie, W @ Phie)
    return G.reshape(T, nr).sum(axis=1)


@dataclass
class LqgSolution:
    ctrl: ControlRecursion
    kalman: KalmanRecursion
    ops: PropagationOps
    maps: ResponseMaps


def solve_lqg(ltv: StackedLtv, Q, R, P, column_weights: Optional[ColumnWeights] = None) -> LqgSolution:
    """All four stages in sequence."""
    ctrl = backward_control(ltv, Q, R, P, column_weights)
    kal = backward_kalman(ltv)
    ops = forward_passes(ltv, ctrl, kal)
    return LqgSolution(ctrl, kal, ops, assemble(ltv, ops))
