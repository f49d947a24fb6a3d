"""Sequential convex programming over the nominal trajectory and the tube.

Each iteration
  1. linearizes the dynamics along the current nominal ``(z, v)``,
  2. solves the LQG response-map problem with the tube scalings as noise
     matrices (two recursions, see :mod:`sls_synth.riccati`),
  3. computes constraint margins from the resulting maps,
  4. solves a QP for ``(dz, dv)`` and takes the step through a nonlinear
     rollout so the nominal stays dynamically feasible.

The QP objective is the tracking cost plus a Gauss-Newton model of how the
tube cost varies with ``b(z_j)``; the tightened rows include the first-order
change of their margins with ``b(z_j)``.  Both terms are what steer the
nominal towards regions with small perception error.  If the tightened QP is
infeasible an elastic copy with penalized row slacks is solved instead, and
the tube weights are increased along the rows that needed slack.

The certainty-equivalent baseline runs the same loop with margins and the
tube term switched off, then computes maps and tubes once at the result.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import (InitialGuessFailed, IntegrationDiverged, QpInfeasible, QpMaxIter,
                     SynthesisInfeasible)
from .model import ProblemSpec, discretize_step, linearize, load_spec, rollout_nominal
from .qp import QpSolution, QuadraticProgram, solve_qp
from .riccati import column_cost_weights, lqg_cost, solve_lqg
from .sls import GainSchedule, ResponseMaps, StackedLtv, recover_gains
from .tubes import (TightenedConstraintReport, TubeParams, build_scalings, constraint_rows,
                    noise_margin_sensitivity, scaled_ltv, scaled_rows, tighten, tube_radii)

log = logging.getLogger(__name__)

STEP_TOL = 1e-3
MAX_ITER = 20
TRUST_INIT = 1.0
TRUST_FLOOR = 1e-4
FEAS_TOL = 1e-8
BACKOFF = 1e-7
ELASTIC_PENALTY = 1e6
MERIT_PENALTY = 1e6
TERMINAL_BOOSTS = 8
TERMINAL_SOFT_WEIGHT = 1e5
ACCEPT_RATIO = 1e-4
SHRINK_RATIO = 0.75          # shrink the trust region unless the model predicted the step well
STALL_TOL = 1e-7             # relative merit change that also counts as converged
QP_METHOD = "clarabel"       # subproblem solver, see qp.solve_qp


@dataclass
class Evaluation:
    """Everything computed at one nominal for one set of tube weights."""

    z: np.ndarray
    v: np.ndarray
    ltv: StackedLtv
    tubes: TubeParams
    maps: ResponseMaps
    report: TightenedConstraintReport
    sensitivity: list
    column_costs: np.ndarray
    J_traj: float
    J_tube: float
    violation: float
    soft_penalty: float = 0.0

    def merit(self, with_tube: bool) -> float:
        extra = self.J_tube + self.soft_penalty if with_tube else 0.0
        return self.J_traj + extra + MERIT_PENALTY * self.violation


@dataclass
class IterationRecord:
    iteration: int
    step_norm: float
    J_traj: float
    J_tube: float
    merit: float
    violation: float
    min_slack: float
    max_margin: float
    trust_radius: float
    accepted: bool
    elastic: bool
    boosted_rows: int
    qp_status: str
    qp_iterations: int


@dataclass
class QpSubproblem:
    """The QP of one iteration plus the layout of its decision vector."""

    qp: QuadraticProgram
    T: int
    nx: int
    nu: int
    n_slack: int
    trust_radius: float
    slack_index: list = field(default_factory=list)   # (k, i) for each elastic slack
    n_soft: int = 0                                     # soft terminal slacks, stored last

    def split(self, x):
        """``(dz, dv, s)`` where ``s`` holds the elastic slacks only."""
        T, nx, nu = self.T, self.nx, self.nu
        dz = np.vstack([np.zeros((1, nx)), x[:T * nx].reshape(T, nx)])
        dv = x[T * nx:T * nx + T * nu].reshape(T, nu)
        n0 = T * (nx + nu)
        s = x[n0:n0 + len(self.slack_index)]
        return dz, dv, s


@dataclass
class SynthesisResult:
    spec: ProblemSpec
    method: str
    z: np.ndarray
    v: np.ndarray
    ltv: StackedLtv
    maps: ResponseMaps
    gains: GainSchedule
    tubes: TubeParams
    radii: np.ndarray
    report: TightenedConstraintReport
    J_traj: float
    J_tube: float
    iterations: list
    converged: bool

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    def terminal_halfwidths(self) -> np.ndarray:
        return self.radii[-1, :self.spec.nx].copy()

    def mean_envelope(self) -> float:
        """Time average of ``b(z_k)`` over k = 0..T."""
        return float(np.mean([self.spec.observation.noise_scale(zk) for zk in self.z]))

    def to_json(self) -> dict:
        return {
            "format": "sls-synth-result/1",
            "method": self.method,
            "converged": self.converged,
            "spec": self.spec.to_dict(),
            "z": self.z.tolist(),
            "v": self.v.tolist(),
            "costs": {"J_traj": self.J_traj, "J_tube": self.J_tube},
            "scalings": {"Sigma": self.tubes.Sigma.tolist(), "Upsilon": self.tubes.Upsilon.tolist(),
                         "tau": self.tubes.tau.tolist()},
            "ltv": {"A": self.ltv.A.tolist(), "B": self.ltv.B.tolist(), "C": self.ltv.C.tolist()},
            "radii": self.radii.tolist(),
            "min_slack": _finite_or_none(self.report.min_slack),
            "maps": self.maps.to_json(),
            "gains": self.gains.to_json(),
            "iterations": [asdict(r) for r in self.iterations],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SynthesisResult":
        spec = load_spec(d["spec"])
        T, nx, nu, nr = spec.T, spec.nx, spec.nu, spec.nr
        tubes = TubeParams(np.asarray(d["scalings"]["Sigma"]), np.asarray(d["scalings"]["Upsilon"]),
                           np.asarray(d["scalings"]["tau"]))
        ltv = StackedLtv(np.asarray(d["ltv"]["A"]), np.asarray(d["ltv"]["B"]), np.asarray(d["ltv"]["C"]),
                         tubes.Sigma[1:], tubes.Upsilon, tubes.Sigma[0])
        z, v = np.asarray(d["z"], float), np.asarray(d["v"], float)
        maps = ResponseMaps.from_json(d["maps"], T, nx, nu, nr)
        report = tighten(maps, tubes, constraint_rows(spec, z), z, v, spec.constraints.tighten_terminal)
        return cls(spec, d["method"], z, v, ltv, maps, GainSchedule.from_json(d["gains"], T, nx, nu, nr),
                   tubes, np.asarray(d["radii"], float), report, d["costs"]["J_traj"], d["costs"]["J_tube"],
                   [IterationRecord(**r) for r in d["iterations"]], bool(d["converged"]))


def _finite_or_none(x: float):
    return float(x) if np.isfinite(x) else None


# --------------------------------------------------------------------------
# evaluation of a nominal
# --------------------------------------------------------------------------


def trajectory_cost(spec: ProblemSpec, z, v) -> float:
    c = spec.costs
    dz = z - spec.goal
    stage = np.einsum("ka,ab,kb->", dz[:-1], c.Qbar, dz[:-1]) + np.einsum("ka,ab,kb->", v, c.Rbar, v)
    return float(stage + dz[-1] @ c.Pbar @ dz[-1])


class TubeWeights:
    """Tube weights ``Q_k, R_k, P`` with per-row increments along constraint normals.

    ``boost[k][i]`` is a multiplier on the base weight scale, added in the
    direction of row ``i`` at time ``k``; it starts at zero.
    """

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.boost: dict[tuple[int, int], float] = {}
        self.count: dict[tuple[int, int], int] = {}

    def __len__(self):
        return len(self.boost)

    def bump(self, k: int, i: int):
        self.boost[(k, i)] = 2.0 * self.boost.get((k, i), 0.0) + 1.0
        self.count[(k, i)] = self.count.get((k, i), 0) + 1

    def matrices(self, rows: list):
        spec = self.spec
        c = spec.costs
        T, nx = spec.T, spec.nx
        Qs = np.repeat(c.Q[None], T, axis=0)
        Rs = np.repeat(c.R[None], T, axis=0)
        P = c.P.copy()
        if not self.boost:
            return c.Q, c.R, c.P
        qs = np.trace(c.Q) / nx
        rs = np.trace(c.R) / spec.nu
        ps = np.trace(c.P) / nx
        for (k, i), nu_ in self.boost.items():
            G = rows[k][0]
            if i >= G.shape[0]:
                continue
            g = G[i]
            gx, gu = g[:nx], g[nx:]
            if k == T:
                if gx @ gx > 0:
                    P = P + nu_ * ps * np.outer(gx, gx) / (gx @ gx)
                continue
            if gx @ gx > 0:
                Qs[k] = Qs[k] + nu_ * qs * np.outer(gx, gx) / (gx @ gx)
            if gu @ gu > 0:
                Rs[k] = Rs[k] + nu_ * rs * np.outer(gu, gu) / (gu @ gu)
        return Qs, Rs, P


def evaluate(spec: ProblemSpec, z, v, weights: Optional[TubeWeights] = None, tube_aware: bool = True) -> Evaluation:
    """Linearize, solve for the response maps and tighten at ``(z, v)``.

    With ``tube_aware=False`` the reported violation ignores margins (the
    certainty-equivalent view); maps and margins are still computed.
    """
    T = spec.T
    A = np.empty((T, spec.nx, spec.nx))
    B = np.empty((T, spec.nx, spec.nu))
    for k in range(T):
        lin = linearize(spec.dynamics, z[k], v[k])
        A[k], B[k] = lin.A, lin.B
    C = np.repeat(spec.observation.Cr[None], T, axis=0)
    base = StackedLtv(A, B, C, np.repeat(spec.noise.E[None], T, axis=0),
                      np.repeat(np.eye(spec.nr)[None], T, axis=0), spec.noise.Xi)
    rows = constraint_rows(spec, z)
    weights = weights or TubeWeights(spec)
    Qw, Rw, Pw = weights.matrices(rows)
    if spec.noise.sigma is None:
        tubes = build_scalings(spec, z, v)
    else:
        tubes = _tau_fixed_point(spec, base, z, v, Qw, Rw, Pw)
    ltv = scaled_ltv(base, tubes)
    sol = solve_lqg(ltv, Qw, Rw, Pw)
    tt = spec.constraints.tighten_terminal
    report = tighten(sol.maps, tubes, rows, z, v, tt)
    c = spec.costs
    J_tube = lqg_cost(sol.maps, ltv, c.Q, c.R, c.P)
    slack = report.slack if tube_aware else [-n for n in report.nominal]
    viol = float(sum(np.maximum(-s, 0.0).sum() for s in slack))
    soft = 0.0
    if spec.constraints.terminal_mode == "soft":
        soft = TERMINAL_SOFT_WEIGHT * float(np.sum(np.maximum(-_terminal_tight_slack(report, sol.maps, tubes, T), 0) ** 2))
    return Evaluation(z, v, ltv, tubes, sol.maps, report, noise_margin_sensitivity(sol.maps, rows, tt),
                      column_cost_weights(sol.maps, c.Q, c.R, c.P), trajectory_cost(spec, z, v), J_tube, viol,
                      soft)


def _terminal_tight_slack(report: TightenedConstraintReport, maps, tubes, T: int) -> np.ndarray:
    """Slack of the rows at k = T if they were tightened; state-only rows only."""
    G, _ = report.rows[T]
    margin = np.abs(G @ scaled_rows(maps, tubes, T)).sum(axis=1)
    return -(report.nominal[T] + margin)


def _soft_terminal_bumps(spec: ProblemSpec, ev: Evaluation, weights: TubeWeights) -> int:
    """Raise the weights along rows at k = T whose tightened form fails."""
    if spec.constraints.terminal_mode != "soft":
        return 0
    T = spec.T
    slack = _terminal_tight_slack(ev.report, ev.maps, ev.tubes, T)
    bumped = 0
    for i in np.flatnonzero(slack < -FEAS_TOL):
        if weights.count.get((T, int(i)), 0) < TERMINAL_BOOSTS:
            weights.bump(T, int(i))
            bumped += 1
    return bumped


def _tau_fixed_point(spec, base, z, v, Qw, Rw, Pw, sweeps: int = 5) -> TubeParams:
    """Scalings with ``tau_k = max_l r_{l,k}``, re-solving the maps each sweep."""
    tubes = build_scalings(spec, z, v)
    for _ in range(sweeps):
        maps = solve_lqg(scaled_ltv(base, tubes), Qw, Rw, Pw).maps
        tau = tube_radii(maps, tubes).max(axis=1)
        new = build_scalings(spec, z, v, tau)
        if np.allclose(new.tau, tubes.tau, rtol=1e-10, atol=1e-14):
            return new
        tubes = new
    return tubes


# --------------------------------------------------------------------------
# QP assembly
# --------------------------------------------------------------------------


def build_qp(spec: ProblemSpec, ev: Evaluation, trust: float, tube_aware: bool, elastic: bool,
             restore: bool = False) -> QpSubproblem:
    """QP in ``(dz_1..dz_T, dv_0..dv_{T-1}, slacks)`` about the nominal of ``ev``.

    With ``restore`` the cost is replaced by ``1/2 |d|^2``, giving the shortest
    step back onto the linearized constraints.
    """
    T, nx, nu = spec.T, spec.nx, spec.nu
    c = spec.costs
    nz, nv = T * nx, T * nu

    def iz(k):  # column offset of dz_k, k >= 1
        return (k - 1) * nx

    def iv(k):
        return nz + k * nu

    z, v = ev.z, ev.v
    # objective: exact quadratic tracking cost in (z + dz, v + dv)
    Pdiag = []
    q = np.zeros(nz + nv)
    for k in range(1, T + 1):
        W = c.Pbar if k == T else c.Qbar
        Pdiag.append(2.0 * W)
        q[iz(k):iz(k) + nx] = 2.0 * W @ (z[k] - spec.goal)
    for k in range(T):
        Pdiag.append(2.0 * c.Rbar)
        q[iv(k):iv(k) + nu] = 2.0 * c.Rbar @ v[k]
    Pmat = sp.block_diag(Pdiag, format="lil")

    grads = np.zeros((T, nx))
    if tube_aware:
        env = spec.observation
        bvals = ev.tubes.b
        for j in range(1, T):
            grads[j] = env.envelope.gradient(z[j])
            g, Gj = grads[j], ev.column_costs[j]
            if Gj > 0 and np.any(g):
                sl = slice(iz(j), iz(j) + nx)
                Pmat[sl, sl] = Pmat[sl, sl].toarray() + 2.0 * Gj * np.outer(g, g)
                q[sl] += 2.0 * Gj * bvals[j] * g

    rows_r, rows_c, rows_v = [], [], []
    lo, hi = [], []
    r = 0

    def put(row, col, val):
        rows_r.append(row)
        rows_c.append(col)
        rows_v.append(val)

    # linearized dynamics with defects
    for k in range(T):
        lin_A, lin_B = ev.ltv.A[k], ev.ltv.B[k]
        defect = discretize_step(spec.dynamics, z[k], v[k]) - z[k + 1]
        for a in range(nx):
            put(r + a, iz(k + 1) + a, 1.0)
            if k >= 1:
                for b in range(nx):
                    if lin_A[a, b] != 0.0:
                        put(r + a, iz(k) + b, -lin_A[a, b])
            for b in range(nu):
                if lin_B[a, b] != 0.0:
                    put(r + a, iv(k) + b, -lin_B[a, b])
        lo.extend(defect)
        hi.extend(defect)
        r += nx

    # tightened constraint rows
    slack_index = []
    n_dec = nz + nv
    for k in range(T + 1):
        G, h = ev.report.rows[k]
        rhs = -(ev.report.nominal[k] + (ev.report.margins[k] if tube_aware else 0.0)) - BACKOFF
        sens = ev.sensitivity[k] if tube_aware else None
        for i in range(G.shape[0]):
            gx, gu = G[i, :nx], G[i, nx:]
            row_has = False
            if k >= 1:
                for a in np.flatnonzero(gx):
                    put(r, iz(k) + a, gx[a])
                    row_has = True
            if k < T:
                for a in np.flatnonzero(gu):
                    put(r, iv(k) + a, gu[a])
                    row_has = True
            if sens is not None:
                for j in range(1, min(k, T)):
                    coef = sens[i, j] * grads[j]
                    for a in np.flatnonzero(coef):
                        put(r, iz(j) + a, coef[a])
                        row_has = True
            if elastic:
                put(r, n_dec + len(slack_index), -1.0)
                slack_index.append((k, i))
                row_has = True
            if not row_has and rhs[i] >= 0:
                continue   # constant row that holds: nothing to enforce
            if not row_has:
                put(r, 0, 0.0)
            lo.append(-np.inf)
            hi.append(rhs[i])
            r += 1

    # soft terminal rows: tightened at k = T with a quadratically penalized slack
    soft_rows = []
    if tube_aware and spec.constraints.terminal_mode == "soft":
        G, _ = ev.report.rows[T]
        rhs = _terminal_tight_slack(ev.report, ev.maps, ev.tubes, T)
        for i in range(G.shape[0]):
            gx = G[i, :nx]
            if not np.any(gx):
                continue
            for a in np.flatnonzero(gx):
                put(r, iz(T) + a, gx[a])
            put(r, n_dec + len(slack_index) + len(soft_rows), -1.0)
            soft_rows.append((T, i))
            lo.append(-np.inf)
            hi.append(rhs[i])
            r += 1

    n_soft = len(soft_rows)
    ns = len(slack_index) + n_soft
    n = n_dec + ns
    # trust region and slack bounds
    for a in range(n_dec):
        put(r + a, a, 1.0)
    lo.extend([-trust] * n_dec)
    hi.extend([trust] * n_dec)
    r += n_dec
    for a in range(ns):
        put(r + a, n_dec + a, 1.0)
    lo.extend([0.0] * ns)
    hi.extend([np.inf] * ns)
    r += ns

    if restore:
        Pmat = sp.identity(n_dec, format="lil")
        q = np.zeros(n_dec)
    A = sp.csc_matrix((rows_v, (rows_r, rows_c)), shape=(r, n))
    n_el = len(slack_index)
    Pslack = sp.diags(np.concatenate([np.zeros(n_el), np.full(n_soft, 2.0 * TERMINAL_SOFT_WEIGHT)]))
    Pfull = sp.block_diag([Pmat.tocsc(), Pslack], format="csc")
    qfull = np.concatenate([q, np.full(n_el, ELASTIC_PENALTY), np.zeros(n_soft)])
    qp = QuadraticProgram(Pfull, qfull, A, np.array(lo, float), np.array(hi, float))
    return QpSubproblem(qp, T, nx, nu, ns, trust, slack_index, n_soft)


def _solve_step(spec, ev, trust, tube_aware, restore=False):
    """Hard QP first, elastic copy if it is infeasible or stalls."""
    sub = build_qp(spec, ev, trust, tube_aware, elastic=False, restore=restore)
    try:
        return sub, solve_qp(sub.qp, method=QP_METHOD), False
    except (QpInfeasible, QpMaxIter):
        pass
    sub = build_qp(spec, ev, trust, tube_aware, elastic=True, restore=restore)
    return sub, solve_qp(sub.qp, method=QP_METHOD), True


def _trial(spec, ev, dv, weights, tube_aware):
    v_new = ev.v + dv
    try:
        z_new = rollout_nominal(spec.dynamics, spec.x0, v_new)
        return evaluate(spec, z_new, v_new, weights, tube_aware)
    except IntegrationDiverged:
        return None


def _restoration_step(spec, ev, trust, weights, tube_aware):
    """Shortest step onto the linearized constraints, kept only if it reduces the violation.

    Margins move with the nominal in ways the QP does not see, so a full step
    can trade a small violation for a new one proportional to its length.  The
    restoration step is proportional to the violation itself, which makes that
    drift shrink geometrically.
    """
    try:
        sub, sol, _ = _solve_step(spec, ev, trust, tube_aware, restore=True)
    except (QpMaxIter, QpInfeasible):
        return None
    dz, dv, _ = sub.split(sol.x)
    cand = _trial(spec, ev, dv, weights, tube_aware)
    if cand is None or cand.violation >= ev.violation:
        return None
    return dz, dv, cand


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------


def _model_merit(ref: Evaluation, ev: Evaluation, tube_aware: bool) -> float:
    """Merit of ``ev`` with the tube cost moved from ``ref`` through ``b(z_j)`` only.

    This is the part of the tube cost the QP models, so actual and predicted
    decrease stay comparable.  The exact tube cost is still what gets logged.
    """
    m = ev.J_traj + MERIT_PENALTY * ev.violation
    if tube_aware:
        db = ev.tubes.b ** 2 - ref.tubes.b ** 2
        m += ref.J_tube + float(ref.column_costs @ db) + ev.soft_penalty
    return m


def _predicted_decrease(ref: Evaluation, sub: QpSubproblem, sol: QpSolution, tube_aware: bool) -> float:
    base = MERIT_PENALTY * ref.violation + (ref.soft_penalty if tube_aware else 0.0)
    return base - sub.qp.objective(sol.x)


def _run_scp(spec: ProblemSpec, z, v, tube_aware: bool, max_iter: int, tol: float,
             boost_weights: bool) -> tuple[Evaluation, list, bool, TubeWeights]:
    weights = TubeWeights(spec)
    ev = evaluate(spec, z, v, weights, tube_aware)
    if tube_aware and boost_weights and _soft_terminal_bumps(spec, ev, weights):
        ev = evaluate(spec, z, v, weights, tube_aware)
    trust = TRUST_INIT
    records: list[IterationRecord] = []
    best = ev if ev.violation <= FEAS_TOL else None
    converged = False
    for it in range(1, max_iter + 1):
        try:
            sub, sol, elastic = _solve_step(spec, ev, trust, tube_aware)
        except (QpMaxIter, QpInfeasible) as exc:
            log.info("iteration %d: QP failed (%s); shrinking trust region", it, exc)
            records.append(IterationRecord(it, float("nan"), ev.J_traj, ev.J_tube, ev.merit(tube_aware),
                                           ev.violation, ev.report.min_slack, ev.report.max_margin(), trust,
                                           False, False, 0, type(exc).__name__, 0))
            if trust <= TRUST_FLOOR:
                break
            trust = max(trust / 2.0, TRUST_FLOOR)
            continue
        dz, dv, s = sub.split(sol.x)
        step = float(np.sqrt(np.sum(dz ** 2) + np.sum(dv ** 2)))
        inf_step = max(float(np.abs(dz).max()), float(np.abs(dv).max()))
        pred = _predicted_decrease(ev, sub, sol, tube_aware)
        boosted = 0
        if elastic and s.size and s.max() > 1e-7:
            tr_active = inf_step >= trust * (1 - 1e-6)
            if it == 1 and not tr_active and (not tube_aware or not boost_weights):
                raise SynthesisInfeasible(
                    f"linearized constraints are infeasible at iteration 1 (total slack {s.sum():.3g})")
            if tube_aware and boost_weights:
                for (k, i), sv in zip(sub.slack_index, s):
                    if sv > 1e-7:
                        weights.bump(k, i)
                        boosted += 1
        cand = _trial(spec, ev, dv, weights, tube_aware)
        if boosted:
            # the weights changed under both points; judge the step by feasibility progress
            ev = evaluate(spec, ev.z, ev.v, weights, tube_aware)
            accept = cand is not None and cand.violation <= ev.violation
            ratio = 1.0 if accept else 0.0
        elif cand is None:
            accept, ratio = False, 0.0
        else:
            actual = _model_merit(ev, ev, tube_aware) - _model_merit(ev, cand, tube_aware)
            scale = 1e-12 * (1.0 + abs(_model_merit(ev, ev, tube_aware)))
            ratio = actual / pred if pred > scale else (1.0 if actual >= -scale else 0.0)
            accept = ratio >= ACCEPT_RATIO
        log.debug("iteration %d: trust %.3g ratio %.3g candidate violation %s", it, trust, ratio,
                  None if cand is None else cand.violation)
        used_trust, full_step = trust, step
        if ratio < SHRINK_RATIO:
            trust = max(0.5 * min(trust, inf_step), TRUST_FLOOR)
        if not accept and not boosted:
            # first try pulling the rejected trial point back, then the current one
            rest = None
            if cand is not None and cand.violation > FEAS_TOL:
                rest = _restoration_step(spec, cand, used_trust, weights, tube_aware)
                if rest is not None and _model_merit(ev, rest[2], tube_aware) >= _model_merit(ev, ev, tube_aware):
                    rest = None
                if rest is not None:
                    rest = (rest[0] + dz, rest[1] + dv, rest[2])
            if rest is None and ev.violation > FEAS_TOL:
                rest = _restoration_step(spec, ev, used_trust, weights, tube_aware)
            if rest is not None:
                dz, dv, cand = rest
                accept = True
                step = float(np.sqrt(np.sum(dz ** 2) + np.sum(dv ** 2)))
                log.debug("iteration %d: restored, violation %s", it, cand.violation)
        rec_ev = cand if accept else ev
        records.append(IterationRecord(it, step, rec_ev.J_traj, rec_ev.J_tube, rec_ev.merit(tube_aware),
                                       rec_ev.violation, rec_ev.report.min_slack, rec_ev.report.max_margin(),
                                       used_trust, bool(accept), elastic, boosted, sol.status, sol.iterations))
        stalled = False
        if accept:
            before = ev.merit(tube_aware)
            stalled = abs(before - cand.merit(tube_aware)) <= STALL_TOL * (1.0 + abs(before))
            ev = cand
            if tube_aware and boost_weights:
                soft = _soft_terminal_bumps(spec, ev, weights)
                if soft:
                    boosted += soft
                    ev = evaluate(spec, ev.z, ev.v, weights, tube_aware)
                    records[-1].boosted_rows = boosted
            if ev.violation <= FEAS_TOL and (best is None or ev.merit(tube_aware) <= best.merit(tube_aware)):
                best = ev
        if (full_step <= tol or stalled) and ev.violation <= FEAS_TOL and not boosted:
            converged = True
            break
    if ev.violation > FEAS_TOL and best is not None:
        ev = best
    return ev, records, converged, weights


def _check_constraint_polytopes(spec: ProblemSpec) -> None:
    """Raise before iterating when the stage or terminal rows admit no point at all."""
    from scipy.optimize import linprog

    cons, nx = spec.constraints, spec.nx
    mask = cons.state_only_mask
    sets = [("stage", cons.G, cons.h),
            ("terminal", np.vstack([cons.G[mask, :nx], cons.GT]), np.concatenate([cons.h[mask], cons.hT]))]
    for what, G, h in sets:
        if not G.shape[0]:
            continue
        lp = linprog(np.zeros(G.shape[1]), A_ub=G, b_ub=-h, bounds=(None, None), method="highs")
        if lp.status == 2:
            raise SynthesisInfeasible(f"the {what} constraint rows are contradictory; no point satisfies them")


def initial_guess(spec: ProblemSpec, max_iter: int = MAX_ITER, tol: float = STEP_TOL):
    """Nominal from SCP on the tracking cost with margins held at zero."""
    _check_constraint_polytopes(spec)
    v0 = np.repeat(spec.u_init[None], spec.T, axis=0)
    try:
        z0 = rollout_nominal(spec.dynamics, spec.x0, v0)
    except IntegrationDiverged as exc:
        raise InitialGuessFailed(f"initial rollout diverged: {exc}") from exc
    ev, records, converged, _ = _run_scp(spec, z0, v0, tube_aware=False, max_iter=max_iter, tol=tol,
                                         boost_weights=False)
    if ev.violation > FEAS_TOL:
        raise SynthesisInfeasible(f"no nominal satisfies the untightened constraints "
                                  f"(violation {ev.violation:.3g} after {len(records)} iterations)")
    return ev, records, converged


def _result(spec, method, ev: Evaluation, records, converged) -> SynthesisResult:
    gains = recover_gains(ev.maps, ev.ltv)
    radii = tube_radii(ev.maps, ev.tubes)
    return SynthesisResult(spec, method, ev.z, ev.v, ev.ltv, ev.maps, gains, ev.tubes, radii, ev.report,
                           ev.J_traj, ev.J_tube, records, converged)


def synthesize(spec, max_iter: int = MAX_ITER, tol: float = STEP_TOL, init=None,
               boost_weights: bool = True) -> SynthesisResult:
    """Joint nominal and output-feedback controller with tightened constraints.

    ``init`` is an optional ``(z, v)`` pair; by default the certainty-equivalent
    nominal from :func:`initial_guess` is used.
    """
    spec = load_spec(spec)
    if init is None:
        ev0, _, _ = initial_guess(spec)
        z, v = ev0.z, ev0.v
    else:
        z, v = np.asarray(init[0], float), np.asarray(init[1], float)
    ev, records, converged, _ = _run_scp(spec, z, v, tube_aware=True, max_iter=max_iter, tol=tol,
                                         boost_weights=boost_weights)
    if ev.violation > FEAS_TOL:
        raise SynthesisInfeasible(f"tightened constraints still violated after {len(records)} iterations "
                                  f"(min slack {ev.report.min_slack:.3g})")
    return _result(spec, "full", ev, records, converged)


def ce_baseline(spec, max_iter: int = MAX_ITER, tol: float = STEP_TOL) -> SynthesisResult:
    """Certainty-equivalent nominal with maps and tubes computed afterwards."""
    spec = load_spec(spec)
    ev, records, converged = initial_guess(spec, max_iter, tol)
    return _result(spec, "ce", ev, records, converged)
