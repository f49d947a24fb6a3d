"""Constraint tightening and tube radii from scaled response maps.

Disturbances and noise are unit-box bounded and then scaled: column ``j = 0``
of the ``*w`` maps by ``Sigma_0 = Xi``, column ``j + 1`` by
``Sigma_{j+1} = E(z_j) + sigma(tau_j, z_j, v_j) I`` and noise column ``j`` by
``Upsilon_j = b(z_j) I``.  The worst case of a linear functional over a unit
box is the l1 norm of its coefficient row, so the margin of a constraint row
is the l1 norm of that row applied to the scaled maps at time ``k``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidEnvelope, OracleTooLarge
from .sls import ResponseMaps, StackedLtv, apply_response


@dataclass
class TubeParams:
    Sigma: np.ndarray    # (T+1, nx, nx); Sigma[0] = Xi
    Upsilon: np.ndarray  # (T, nr, nr)
    tau: np.ndarray      # (T+1,)

    @property
    def b(self) -> np.ndarray:
        """Envelope values ``b(z_j)`` read back from the diagonal of ``Upsilon``."""
        return self.Upsilon[:, 0, 0].copy()


def build_scalings(spec, z, v, tau=None) -> TubeParams:
    """Scalings along the nominal ``(z, v)``; ``tau`` defaults to zeros."""
    T, nx, nr = spec.T, spec.nx, spec.nr
    z = np.asarray(z, float)
    v = np.asarray(v, float)
    tau = np.zeros(T + 1) if tau is None else np.asarray(tau, float)
    Sigma = np.empty((T + 1, nx, nx))
    Upsilon = np.empty((T, nr, nr))
    Sigma[0] = spec.noise.Xi
    for j in range(T):
        b = spec.observation.noise_scale(z[j])
        if not np.isfinite(b) or b < 0:
            raise InvalidEnvelope(f"envelope b(z_{j}) = {b} is negative or non-finite")
        Upsilon[j] = b * np.eye(nr)
        Sigma[j + 1] = spec.noise.E_at(z[j]) + spec.noise.sigma_at(tau[j], z[j], v[j]) * np.eye(nx)
    return TubeParams(Sigma, Upsilon, tau)


def scaled_ltv(ltv: StackedLtv, tubes: TubeParams) -> StackedLtv:
    """``ltv`` with its noise scalings replaced by the tube scalings."""
    return StackedLtv(ltv.A, ltv.B, ltv.C, tubes.Sigma[1:], tubes.Upsilon, tubes.Sigma[0])


def scaled_rows(maps: ResponseMaps, tubes: TubeParams, k: int) -> np.ndarray:
    """Response of ``[dx_k; du_k]`` to the unit-box disturbance vector ``(w, e)``.

    Shape ``(nx + nu, (T+1) nx + T nr)``; input rows are zero at ``k = T``.
    """
    T, nx, nu = maps.T, maps.nx, maps.nu
    xw = np.einsum("jab,jbc->jac", maps.xw[k], tubes.Sigma)
    xe = np.einsum("jab,jbc->jac", maps.xe[k], tubes.Upsilon)
    top = np.hstack([xw.transpose(1, 0, 2).reshape(nx, -1), xe.transpose(1, 0, 2).reshape(nx, -1)])
    if k < T:
        uw = np.einsum("jab,jbc->jac", maps.uw[k], tubes.Sigma)
        ue = np.einsum("jab,jbc->jac", maps.ue[k], tubes.Upsilon)
        bot = np.hstack([uw.transpose(1, 0, 2).reshape(nu, -1), ue.transpose(1, 0, 2).reshape(nu, -1)])
    else:
        bot = np.zeros((nu, top.shape[1]))
    return np.vstack([top, bot])


def tube_radii(maps: ResponseMaps, tubes: TubeParams) -> np.ndarray:
    """Half-widths ``r[k, l]`` of the tube around ``(z_k, v_k)``, shape ``(T+1, nx+nu)``."""
    return np.stack([np.abs(scaled_rows(maps, tubes, k)).sum(axis=1) for k in range(maps.T + 1)])


@dataclass
class TightenedConstraintReport:
    """Per-time-step constraint data.  Index ``k`` of every list is time ``k``.

    ``nominal[k][i] = c_i @ (z_k, v_k) + b_i``; the tightened row holds when
    ``slack = -(nominal + margin) >= 0``.
    """

    rows: list = field(default_factory=list)      # (G_k, h_k)
    margins: list = field(default_factory=list)
    nominal: list = field(default_factory=list)

    @property
    def slack(self) -> list:
        return [-(n + m) for n, m in zip(self.nominal, self.margins)]

    @property
    def min_slack(self) -> float:
        vals = [s.min() for s in self.slack if s.size]
        return float(min(vals)) if vals else np.inf

    def max_margin(self) -> float:
        vals = [m.max() for m in self.margins if m.size]
        return float(max(vals)) if vals else 0.0


def constraint_rows(spec, z) -> list:
    return [spec.constraints.rows_at(k, spec.T, z[k]) for k in range(spec.T + 1)]


def tighten(maps: ResponseMaps, tubes: TubeParams, rows: list, z, v,
            tighten_terminal: bool = False) -> TightenedConstraintReport:
    """Margins ``sum_j |c' Phi_w[k, j] Sigma_j|_1 + |c' Phi_e[k, j] Upsilon_j|_1`` per row.

    Rows are tightened for k = 0..T-1.  At k = T they constrain the nominal
    only unless ``tighten_terminal`` is set.
    """
    T, nu = maps.T, maps.nu
    rep = TightenedConstraintReport()
    for k in range(T + 1):
        G, h = rows[k]
        resp = scaled_rows(maps, tubes, k)
        margin = np.abs(G @ resp).sum(axis=1)
        if k == T and not tighten_terminal:
            margin = np.zeros_like(margin)
        uk = v[k] if k < T else np.zeros(nu)
        rep.rows.append((G, h))
        rep.margins.append(margin)
        rep.nominal.append(G @ np.concatenate([z[k], uk]) + h)
    return rep


def noise_margin_sensitivity(maps: ResponseMaps, rows: list, tighten_terminal: bool = False) -> list:
    """``a[k][i, j] = |c_i' Phi_e[k, j]|_1`` so that the noise part of a margin
    is ``sum_j a[k][i, j] * b(z_j)``."""
    T, nx = maps.T, maps.nx
    out = []
    for k in range(T + 1):
        G, _ = rows[k]
        pe = maps.xe[k]                                   # (T, nx, nr)
        contrib = np.einsum("ia,jab->ijb", G[:, :nx], pe)
        if k < T:
            contrib = contrib + np.einsum("ia,jab->ijb", G[:, nx:], maps.ue[k])
        sens = np.abs(contrib).sum(axis=2)                # (m_k, T)
        out.append(sens if k < T or tighten_terminal else np.zeros_like(sens))
    return out


def vertex_oracle(maps: ResponseMaps, tubes: TubeParams, direction, k: int, max_dim: int = 20) -> float:
    """``max c' [dx_k; du_k]`` over every vertex of the unit disturbance box.

    Enumerates all ``2^N`` sign patterns, so ``N`` is capped at ``max_dim``.
    """
    T, nx, nu, nr = maps.T, maps.nx, maps.nu, maps.nr
    N = (T + 1) * nx + T * nr
    if N > max_dim:
        raise OracleTooLarge(f"disturbance dimension {N} exceeds the vertex oracle cap {max_dim}")
    c = np.asarray(direction, float)
    ltv = StackedLtv(np.zeros((T, nx, nx)), np.zeros((T, nx, nu)), np.zeros((T, nr, nx)),
                     tubes.Sigma[1:], tubes.Upsilon, tubes.Sigma[0])
    best = -np.inf
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=N)))
    for chunk in np.array_split(signs, max(1, len(signs) // 65536)):
        w = chunk[:, :(T + 1) * nx].reshape(-1, T + 1, nx)
        e = chunk[:, (T + 1) * nx:].reshape(-1, T, nr)
        dx, du = apply_response(maps, ltv, w, e)
        val = dx[:, k] @ c[:nx]
        if k < T:
            val = val + du[:, k] @ c[nx:]
        best = max(best, float(val.max()))
    return best
