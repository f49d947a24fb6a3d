"""Block-causal closed-loop response maps of a finite-horizon LTV system.

Stacking and indexing
---------------------
The deviation system over a horizon ``T`` is::

    dx_0     = Xi w~
    dx_{k+1} = A_k dx_k + B_k du_k + E_k w_k          k = 0..T-1
    dy_{k+1} = C_k dx_k + F_k e_k

* ``w = (w~, w_0, ..., w_{T-1})`` has T+1 blocks of size nx.  Column block
  ``j = 0`` of the ``*w`` maps is the initial condition, column ``j >= 1`` is
  the process disturbance injected at time ``j - 1``.
* ``e = (e_0, ..., e_{T-1})`` has T blocks of size nr; column ``j`` of the
  ``*e`` maps is the noise on measurement ``dy_{j+1}``.
* State rows run k = 0..T, input rows k = 0..T-1.

``M = I - ZA`` is ``(T+1)nx`` square with ``-A_k`` on block ``(k+1, k)``;
``ZB`` puts ``B_k`` on block ``(k+1, k)``; ``ZC`` is ``T nr x (T+1) nx``
with ``C_j`` on block ``(j, j)``.  Feasible maps satisfy::

    [M, -ZB] Phi = [I, 0]        Phi [M; -ZC] = [I; 0]

Blocks are stored as 4-D arrays indexed ``[k, j, :, :]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GainRecoveryFailed, ShapeError


def blocks_to_dense(blocks: np.ndarray) -> np.ndarray:
    r, c, n, m = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(r * n, c * m)


def dense_to_blocks(mat: np.ndarray, n: int, m: int) -> np.ndarray:
    R, C = mat.shape
    return mat.reshape(R // n, n, C // m, m).transpose(0, 2, 1, 3).copy()


def block_diag_seq(blocks) -> np.ndarray:
    blocks = [np.atleast_2d(b) for b in blocks]
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass
class StackedLtv:
    """Per-step matrices of the deviation system (see module docstring)."""

    A: np.ndarray   # (T, nx, nx)
    B: np.ndarray   # (T, nx, nu)
    C: np.ndarray   # (T, nr, nx)
    E: np.ndarray   # (T, nx, nx)
    F: np.ndarray   # (T, nr, nr)
    Xi: np.ndarray  # (nx, nx)

    def __post_init__(self):
        self.A = np.asarray(self.A, float)
        self.B = np.asarray(self.B, float)
        self.C = np.asarray(self.C, float)
        self.E = np.asarray(self.E, float)
        self.F = np.asarray(self.F, float)
        self.Xi = np.asarray(self.Xi, float)
        T, nx, nu, nr = self.T, self.nx, self.nu, self.nr
        expected = {"A": (T, nx, nx), "B": (T, nx, nu), "C": (T, nr, nx), "E": (T, nx, nx),
                    "F": (T, nr, nr), "Xi": (nx, nx)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"StackedLtv.{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def T(self) -> int:
        return self.A.shape[0]

    @property
    def nx(self) -> int:
        return self.A.shape[1]

    @property
    def nu(self) -> int:
        return self.B.shape[2]

    @property
    def nr(self) -> int:
        return self.C.shape[1]

    @classmethod
    def time_invariant(cls, A, B, C, E, F, Xi, T: int) -> "StackedLtv":
        rep = lambda m: np.repeat(np.asarray(m, float)[None], T, axis=0)
        return cls(rep(np.atleast_2d(A)), rep(np.atleast_2d(B)), rep(np.atleast_2d(C)),
                   rep(np.atleast_2d(E)), rep(np.atleast_2d(F)), np.atleast_2d(Xi))

    def M_dense(self) -> np.ndarray:
        T, nx = self.T, self.nx
        M = np.eye((T + 1) * nx)
        for k in range(T):
            M[(k + 1) * nx:(k + 2) * nx, k * nx:(k + 1) * nx] = -self.A[k]
        return M

    def ZB_dense(self) -> np.ndarray:
        T, nx, nu = self.T, self.nx, self.nu
        out = np.zeros(((T + 1) * nx, T * nu))
        for k in range(T):
            out[(k + 1) * nx:(k + 2) * nx, k * nu:(k + 1) * nu] = self.B[k]
        return out

    def ZC_dense(self) -> np.ndarray:
        T, nx, nr = self.T, self.nx, self.nr
        out = np.zeros((T * nr, (T + 1) * nx))
        for k in range(T):
            out[k * nr:(k + 1) * nr, k * nx:(k + 1) * nx] = self.C[k]
        return out

    def E_dense(self) -> np.ndarray:
        return block_diag_seq([self.Xi, *self.E])

    def F_dense(self) -> np.ndarray:
        return block_diag_seq(list(self.F))


@dataclass
class ResponseMaps:
    """The four closed-loop maps, stored block-wise.

    ``xw[k, j]`` is the response of ``dx_k`` to column ``j`` of ``w`` and so on;
    see the module docstring for the column conventions.
    """

    xw: np.ndarray  # (T+1, T+1, nx, nx)
    xe: np.ndarray  # (T+1, T,   nx, nr)
    uw: np.ndarray  # (T,   T+1, nu, nx)
    ue: np.ndarray  # (T,   T,   nu, nr)

    @property
    def T(self) -> int:
        return self.uw.shape[0]

    @property
    def nx(self) -> int:
        return self.xw.shape[2]

    @property
    def nu(self) -> int:
        return self.uw.shape[2]

    @property
    def nr(self) -> int:
        return self.xe.shape[3]

    @classmethod
    def zeros(cls, T, nx, nu, nr) -> "ResponseMaps":
        return cls(np.zeros((T + 1, T + 1, nx, nx)), np.zeros((T + 1, T, nx, nr)),
                   np.zeros((T, T + 1, nu, nx)), np.zeros((T, T, nu, nr)))

    @classmethod
    def from_dense(cls, xw, xe, uw, ue, nx, nu, nr) -> "ResponseMaps":
        return cls(dense_to_blocks(xw, nx, nx), dense_to_blocks(xe, nx, nr),
                   dense_to_blocks(uw, nu, nx), dense_to_blocks(ue, nu, nr))

    def dense(self) -> np.ndarray:
        """The full stacked operator ``[[xw, xe], [uw, ue]]``."""
        return np.block([[blocks_to_dense(self.xw), blocks_to_dense(self.xe)],
                         [blocks_to_dense(self.uw), blocks_to_dense(self.ue)]])

    def to_json(self) -> dict:
        return {name: blocks_to_json(getattr(self, name)) for name in ("xw", "xe", "uw", "ue")}

    @classmethod
    def from_json(cls, d: dict, T: int, nx: int, nu: int, nr: int) -> "ResponseMaps":
        shapes = {"xw": (T + 1, T + 1, nx, nx), "xe": (T + 1, T, nx, nr),
                  "uw": (T, T + 1, nu, nx), "ue": (T, T, nu, nr)}
        return cls(**{k: blocks_from_json(d[k], s) for k, s in shapes.items()})


def blocks_to_json(blocks: np.ndarray) -> dict:
    """``{"k,j": [[...]]}`` for every block that is not identically zero."""
    out = {}
    for k in range(blocks.shape[0]):
        for j in range(blocks.shape[1]):
            b = blocks[k, j]
            if np.any(b != 0.0):
                out[f"{k},{j}"] = b.tolist()
    return out


def blocks_from_json(d: dict, shape) -> np.ndarray:
    out = np.zeros(shape)
    for key, val in d.items():
        k, j = (int(s) for s in key.split(","))
        out[k, j] = np.asarray(val, float)
    return out


@dataclass
class GainSchedule:
    """Output-feedback law ``du_k = K0_k dx_0 + sum_{j<k} K_{k,j} dy_{j+1}``."""

    K0: np.ndarray  # (T, nu, nx)
    K: np.ndarray   # (T, T, nu, nr); only j < k is used

    def to_json(self) -> dict:
        return {"K0": {str(k): self.K0[k].tolist() for k in range(self.K0.shape[0])},
                "K": blocks_to_json(self.K)}

    @classmethod
    def from_json(cls, d: dict, T: int, nx: int, nu: int, nr: int) -> "GainSchedule":
        K0 = np.zeros((T, nu, nx))
        for key, val in d["K0"].items():
            K0[int(key)] = np.asarray(val, float)
        return cls(K0, blocks_from_json(d["K"], (T, T, nu, nr)))


def _check_maps_against(maps: ResponseMaps, ltv: StackedLtv):
    want = (ltv.T, ltv.nx, ltv.nu, ltv.nr)
    got = (maps.T, maps.nx, maps.nu, maps.nr)
    if want != got:
        raise ShapeError(f"maps have (T, nx, nu, nr)={got}, system has {want}")


def apply_response(maps: ResponseMaps, ltv: StackedLtv, w, e):
    """Closed-loop deviations ``(dx, du)`` for disturbances ``w`` and noise ``e``.

    ``w`` has shape ``(..., T+1, nx)`` and ``e`` shape ``(..., T, nr)``; the
    scalings ``Xi``, ``E_k`` and ``F_k`` of ``ltv`` are applied here.  Returns
    ``dx`` of shape ``(..., T+1, nx)`` and ``du`` of shape ``(..., T, nu)``.
    """
    _check_maps_against(maps, ltv)
    T, nx, nr = ltv.T, ltv.nx, ltv.nr
    w = np.asarray(w, float)
    e = np.asarray(e, float)
    if w.shape[-2:] != (T + 1, nx) or e.shape[-2:] != (T, nr) or w.shape[:-2] != e.shape[:-2]:
        raise ShapeError(f"w must end in {(T + 1, nx)} and e in {(T, nr)}; got {w.shape}, {e.shape}")
    ws = np.concatenate([(w[..., :1, :] @ ltv.Xi.T), np.einsum("tab,...tb->...ta", ltv.E, w[..., 1:, :])], axis=-2)
    es = np.einsum("tab,...tb->...ta", ltv.F, e)
    dx = np.einsum("kjab,...jb->...ka", maps.xw, ws) + np.einsum("kjab,...jb->...ka", maps.xe, es)
    du = np.einsum("kjab,...jb->...ka", maps.uw, ws) + np.einsum("kjab,...jb->...ka", maps.ue, es)
    return dx, du


@dataclass
class IdentityResiduals:
    left: float
    right: float
    causality: float

    @property
    def worst(self) -> float:
        return max(self.left, self.right, self.causality)


def check_identities(maps: ResponseMaps, ltv: StackedLtv) -> IdentityResiduals:
    """Max-abs residuals of both affine identities and of the causal pattern.

    The pattern requires ``xw[k, j] = uw[k, j] = 0`` for ``j > k`` and
    ``xe[k, j] = ue[k, j] = 0`` for ``j >= k``.
    """
    _check_maps_against(maps, ltv)
    M, ZB, ZC = ltv.M_dense(), ltv.ZB_dense(), ltv.ZC_dense()
    xw, xe = blocks_to_dense(maps.xw), blocks_to_dense(maps.xe)
    uw, ue = blocks_to_dense(maps.uw), blocks_to_dense(maps.ue)
    I = np.eye(M.shape[0])
    left = max(np.abs(M @ xw - ZB @ uw - I).max(), np.abs(M @ xe - ZB @ ue).max(initial=0.0))
    right = max(np.abs(xw @ M - xe @ ZC - I).max(), np.abs(uw @ M - ue @ ZC).max(initial=0.0))
    caus = 0.0
    for arr, strict in ((maps.xw, False), (maps.uw, False), (maps.xe, True), (maps.ue, True)):
        R, Cn = arr.shape[:2]
        k, j = np.meshgrid(np.arange(R), np.arange(Cn), indexing="ij")
        mask = (j >= k) if strict else (j > k)
        if mask.any():
            caus = max(caus, float(np.abs(arr[mask]).max()))
    return IdentityResiduals(float(left), float(right), caus)


def _solve_lower_unit(xw: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    """Forward substitution for ``xw @ X = rhs`` with block-lower ``xw``."""
    n = xw.shape[0]
    X = np.zeros((n,) + rhs.shape[1:])
    for k in range(n):
        acc = rhs[k] - np.einsum("mab,mjbc->jac", xw[k, :k], X[:k]) if k else rhs[k].copy()
        d = xw[k, k]
        if np.allclose(d, np.eye(d.shape[0]), rtol=0, atol=1e-12):
            X[k] = acc
        else:
            try:
                X[k] = np.linalg.solve(d[None], acc)
            except np.linalg.LinAlgError as exc:
                raise GainRecoveryFailed(f"{what}: diagonal block {k} is singular") from exc
        if not np.all(np.isfinite(X[k])):
            raise GainRecoveryFailed(f"{what}: non-finite entries at block {k}")
    return X


def recover_gains(maps: ResponseMaps, ltv: StackedLtv) -> GainSchedule:
    """Output-feedback gains realizing ``maps``.

    ``K = ue - uw xw^{-1} xe``; ``K0_k`` is the part of the initial-condition
    column of ``uw xw^{-1}`` that is not already produced by ``K_{k,0} C_0``.
    It vanishes for maps satisfying both identities.
    """
    _check_maps_against(maps, ltv)
    T = maps.T
    for k in range(T + 1):
        d = maps.xw[k, k]
        if not np.all(np.isfinite(d)) or abs(np.linalg.det(d)) < 1e-14:
            raise GainRecoveryFailed(f"xw diagonal block {k} is singular")
    X = _solve_lower_unit(maps.xw, maps.xe, "xw^-1 xe")          # (T+1, T, nx, nr)
    K = maps.ue - np.einsum("kmab,mjbc->kjac", maps.uw, X)
    # column 0 of uw xw^{-1}: solve Y xw = uw by backward substitution over columns
    Y = np.zeros_like(maps.uw)
    for j in range(T, -1, -1):
        acc = maps.uw[:, j] - np.einsum("kmab,mbc->kac", Y[:, j + 1:], maps.xw[j + 1:, j])
        Y[:, j] = np.linalg.solve(maps.xw[j, j].T[None], acc.transpose(0, 2, 1)).transpose(0, 2, 1)
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(Y))):
        raise GainRecoveryFailed("non-finite gains")
    K0 = Y[:, 0] - K[:, 0] @ ltv.C[0]
    return GainSchedule(K0, K)


def simulate_closed_loop_ltv(ltv: StackedLtv, gains: GainSchedule, w, e):
    """Step the deviation system under ``gains``; same layout as :func:`apply_response`."""
    T, nx, nu = ltv.T, ltv.nx, ltv.nu
    w = np.asarray(w, float)
    e = np.asarray(e, float)
    batch = w.shape[:-2]
    dx = np.zeros(batch + (T + 1, nx))
    du = np.zeros(batch + (T, nu))
    dy = np.zeros(batch + (T, ltv.nr))
    dx[..., 0, :] = w[..., 0, :] @ ltv.Xi.T
    for k in range(T):
        u = dx[..., 0, :] @ gains.K0[k].T
        if k:
            u = u + np.einsum("jab,...jb->...a", gains.K[k, :k], dy[..., :k, :])
        du[..., k, :] = u
        dy[..., k, :] = dx[..., k, :] @ ltv.C[k].T + e[..., k, :] @ ltv.F[k].T
        dx[..., k + 1, :] = dx[..., k, :] @ ltv.A[k].T + u @ ltv.B[k].T + w[..., k + 1, :] @ ltv.E[k].T
    return dx, du
