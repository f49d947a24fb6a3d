"""Problem description: dynamics, observations, constraints, costs, noise.

A :class:`ProblemSpec` is the single object handed to the synthesis loop.  It
is read from JSON (see ``data/*.json`` for the built-in benchmarks) and can be
written back with :meth:`ProblemSpec.to_dict`.

Conventions
-----------
* Constraint rows read ``c @ [x; u] + b <= 0``.
* The discrete step is one classical RK4 step of the continuous vector field.
* The perception error envelope ``b(x)`` is a scalar and the observation noise
  matrix is ``b(x) * I``.
"""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import IntegrationDiverged, InvalidEnvelope, LinearizationFailed, SpecError
from .vector_fields import VectorField, get_vector_field

_DIVERGENCE_LIMIT = 1e12
TERMINAL_MODES = ("nominal", "soft", "hard")


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------


@dataclass
class DynamicsModel:
    """Continuous vector field plus the sample time used to discretize it."""

    name: str
    nx: int
    nu: int
    dt: float
    params: dict = field(default_factory=dict)
    field_: Optional[VectorField] = None

    @classmethod
    def from_id(cls, name: str, dt: float, params: Optional[dict] = None) -> "DynamicsModel":
        vf = get_vector_field(name)
        return cls(name, vf.nx, vf.nu, float(dt), dict(params or {}), vf)

    @property
    def has_jacobian(self) -> bool:
        return self.field_ is not None and self.field_.jac is not None

    def rhs(self, x, u) -> np.ndarray:
        return self.field_.f(np.asarray(x, float), np.asarray(u, float), self.params)

    def rhs_jacobian(self, x, u):
        return self.field_.jac(np.asarray(x, float), np.asarray(u, float), self.params)


@dataclass
class LinearizedModel:
    A: np.ndarray
    B: np.ndarray
    x_next: np.ndarray


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > _DIVERGENCE_LIMIT:
        raise IntegrationDiverged(f"{what} produced a non-finite or diverging state")
    return x


def discretize_step(dyn: DynamicsModel, x, u, dt: Optional[float] = None) -> np.ndarray:
    """One RK4 step of ``dyn`` from ``x`` under the held input ``u``."""
    h = dyn.dt if dt is None else float(dt)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    with np.errstate(all="ignore"):
        k1 = dyn.rhs(x, u)
        k2 = dyn.rhs(x + 0.5 * h * k1, u)
        k3 = dyn.rhs(x + 0.5 * h * k2, u)
        k4 = dyn.rhs(x + h * k3, u)
        out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _check_finite(out, f"{dyn.name} step")


def _rk4_sensitivity(dyn: DynamicsModel, x, u, h):
    """RK4 step together with its exact Jacobian, propagated through the stages."""
    nx, nu = dyn.nx, dyn.nu
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    d0 = np.hstack([np.eye(nx), np.zeros((nx, nu))])
    du = np.hstack([np.zeros((nu, nx)), np.eye(nu)])

    def stage(xs, dxs):
        jx, ju = dyn.rhs_jacobian(xs, u)
        return dyn.rhs(xs, u), jx @ dxs + ju @ du

    k1, d1 = stage(x, d0)
    k2, d2 = stage(x + 0.5 * h * k1, d0 + 0.5 * h * d1)
    k3, d3 = stage(x + 0.5 * h * k2, d0 + 0.5 * h * d2)
    k4, d4 = stage(x + h * k3, d0 + h * d3)
    xn = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    dn = d0 + (h / 6.0) * (d1 + 2 * d2 + 2 * d3 + d4)
    return xn, dn[:, :nx], dn[:, nx:]


def linearize(dyn: DynamicsModel, x, u, method: str = "auto") -> LinearizedModel:
    """Jacobians of the discrete step at ``(x, u)``.

    ``method`` is ``"analytic"`` (chain rule through the RK4 stages using the
    registered continuous Jacobian), ``"fd"`` (central differences with step
    ``1e-6 * max(1, |x_i|)``) or ``"auto"`` (analytic when available).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if method == "auto":
        method = "analytic" if dyn.has_jacobian else "fd"
    with np.errstate(all="ignore"):
        if method == "analytic":
            xn, A, B = _rk4_sensitivity(dyn, x, u, dyn.dt)
        elif method == "fd":
            xn = discretize_step(dyn, x, u)
            A = np.empty((dyn.nx, dyn.nx))
            B = np.empty((dyn.nx, dyn.nu))
            for i in range(dyn.nx):
                h = 1e-6 * max(1.0, abs(x[i]))
                dx = np.zeros(dyn.nx)
                dx[i] = h
                A[:, i] = (discretize_step(dyn, x + dx, u) - discretize_step(dyn, x - dx, u)) / (2 * h)
            for i in range(dyn.nu):
                h = 1e-6 * max(1.0, abs(u[i]))
                du = np.zeros(dyn.nu)
                du[i] = h
                B[:, i] = (discretize_step(dyn, x, u + du) - discretize_step(dyn, x, u - du)) / (2 * h)
        else:
            raise ValueError(f"unknown linearization method {method!r}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(xn))):
        raise LinearizationFailed(f"non-finite Jacobian for {dyn.name} at x={x}, u={u}")
    return LinearizedModel(A, B, xn)


def rollout_nominal(dyn: DynamicsModel, x0, v: np.ndarray) -> np.ndarray:
    """Open-loop state sequence ``z_0..z_T`` under inputs ``v_0..v_{T-1}``."""
    z = np.empty((len(v) + 1, dyn.nx))
    z[0] = x0
    for k, vk in enumerate(v):
        z[k + 1] = discretize_step(dyn, z[k], vk)
    return z


# --------------------------------------------------------------------------
# perception error envelopes
# --------------------------------------------------------------------------


class Envelope:
    """Scalar overbound ``b(x)`` on the perception error."""

    kind = "abstract"

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class ConstantEnvelope(Envelope):
    kind = "constant"

    def __init__(self, value: float, nx: int):
        self.level = float(value)
        self.nx = nx

    def value(self, x):
        return self.level

    def gradient(self, x):
        return np.zeros(self.nx)

    def to_dict(self):
        return {"id": "constant", "params": {"value": self.level}}


class QuadraticEnvelope(Envelope):
    """``offset + coef * (x[index] - center)**2``; the light-dark envelope."""

    kind = "quadratic"

    def __init__(self, coef: float, index: int, center: float, nx: int, offset: float = 0.0):
        self.coef, self.index, self.center, self.offset = float(coef), int(index), float(center), float(offset)
        self.nx = nx

    def value(self, x):
        return self.offset + self.coef * (x[self.index] - self.center) ** 2

    def gradient(self, x):
        g = np.zeros(self.nx)
        g[self.index] = 2.0 * self.coef * (x[self.index] - self.center)
        return g

    def to_dict(self):
        return {"id": "quadratic", "params": {"coef": self.coef, "index": self.index,
                                               "center": self.center, "offset": self.offset}}


class OcclusionEnvelope(Envelope):
    """``beta0 + beta1 * exp(-|x[idx] - c|^2 / r^2)``: a Gaussian bump of poor visibility."""

    kind = "occlusion"

    def __init__(self, beta0, beta1, center, radius, indices, nx):
        self.beta0, self.beta1 = float(beta0), float(beta1)
        self.center = np.asarray(center, float)
        self.radius = float(radius)
        self.indices = list(indices)
        self.nx = nx

    def value(self, x):
        d = np.asarray(x)[self.indices] - self.center
        return self.beta0 + self.beta1 * np.exp(-d @ d / self.radius ** 2)

    def gradient(self, x):
        d = np.asarray(x)[self.indices] - self.center
        bump = self.beta1 * np.exp(-d @ d / self.radius ** 2)
        g = np.zeros(self.nx)
        g[self.indices] = -2.0 * bump * d / self.radius ** 2
        return g

    def to_dict(self):
        return {"id": "occlusion", "params": {"beta0": self.beta0, "beta1": self.beta1,
                                               "center": self.center.tolist(), "radius": self.radius,
                                               "indices": self.indices}}


def monomial_exponents(nvars: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples of total degree ``<= degree``, graded then lexicographic."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


class PolynomialEnvelope(Envelope):
    """``beta @ m(x[indices])`` with a monomial feature vector ``m``."""

    kind = "polynomial"

    def __init__(self, indices, exponents, beta, nx, names=None):
        self.indices = list(indices)
        self.exponents = np.asarray(exponents, dtype=int).reshape(-1, len(self.indices))
        self.beta = np.asarray(beta, float)
        self.nx = nx
        self.names = list(names) if names is not None else None

    def features(self, x) -> np.ndarray:
        p = np.asarray(x, float)[..., self.indices]
        return np.prod(p[..., None, :] ** self.exponents, axis=-1)

    def value(self, x):
        return float(self.features(x) @ self.beta)

    def gradient(self, x):
        p = np.asarray(x, float)[self.indices]
        g = np.zeros(self.nx)
        for col, idx in enumerate(self.indices):
            e = self.exponents.copy()
            coef = e[:, col].astype(float)
            e[:, col] = np.maximum(e[:, col] - 1, 0)
            g[idx] = float((coef * np.prod(p ** e, axis=-1)) @ self.beta)
        return g

    def to_dict(self):
        d = {"id": "polynomial", "params": {"indices": self.indices,
                                             "exponents": self.exponents.tolist(),
                                             "beta": self.beta.tolist()}}
        if self.names is not None:
            d["params"]["names"] = self.names
        return d


def envelope_from_dict(d: dict, nx: int) -> Envelope:
    kind = d.get("id")
    p = d.get("params", {})
    try:
        if kind == "constant":
            return ConstantEnvelope(p["value"], nx)
        if kind == "quadratic":
            return QuadraticEnvelope(p["coef"], p["index"], p["center"], nx, p.get("offset", 0.0))
        if kind == "occlusion":
            return OcclusionEnvelope(p["beta0"], p["beta1"], p["center"], p["radius"], p["indices"], nx)
        if kind == "polynomial":
            return PolynomialEnvelope(p["indices"], p["exponents"], p["beta"], nx, p.get("names"))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidEnvelope(f"malformed envelope {d!r}: {exc}") from exc
    raise InvalidEnvelope(f"unknown envelope id {kind!r}")


@dataclass
class ObservationModel:
    """Reduced observation ``C^r x`` corrupted by noise bounded by ``b(x)``."""

    Cr: np.ndarray
    envelope: Envelope

    @property
    def nr(self) -> int:
        return self.Cr.shape[0]

    def h(self, x) -> np.ndarray:
        return self.Cr @ np.asarray(x, float)

    def noise_scale(self, x) -> float:
        return float(self.envelope.value(x))


# --------------------------------------------------------------------------
# constraints
# --------------------------------------------------------------------------


@dataclass
class Obstacle:
    center: np.ndarray
    radius: float
    indices: list

    def distance(self, x) -> float:
        return float(np.linalg.norm(np.asarray(x)[self.indices] - self.center))


@dataclass
class ConstraintSet:
    """Polytopic stage and terminal constraints plus circular keep-out zones.

    Stage rows ``G @ [x; u] + h <= 0`` hold for k = 0..T-1; rows whose input
    part is zero are also enforced at k = T.  Terminal rows ``GT @ x + hT <= 0``
    hold only at k = T.  How rows at k = T are treated depends on
    ``terminal_mode``:

    ``nominal``  the nominal ``z_T`` must satisfy them, no margins;
    ``soft``     as ``nominal``, and the tube weights are raised along rows
                 whose tightened version fails, which shrinks the terminal tube;
    ``hard``     tightened like every other time step.

    Obstacles are enforced
    at every k through the tangent half-space at the current nominal, which
    lies outside the disc.
    """

    nx: int
    nu: int
    G: np.ndarray
    h: np.ndarray
    GT: np.ndarray
    hT: np.ndarray
    obstacles: list = field(default_factory=list)
    terminal_mode: str = "soft"

    @property
    def tighten_terminal(self) -> bool:
        return self.terminal_mode == "hard"

    @property
    def state_only_mask(self) -> np.ndarray:
        return np.all(self.G[:, self.nx:] == 0.0, axis=1)

    def rows_at(self, k: int, T: int, zk) -> tuple[np.ndarray, np.ndarray]:
        """Active rows at time ``k`` as ``(G_k, h_k)`` over ``[x; u]``."""
        n = self.nx + self.nu
        if k < T:
            Gs, hs = [self.G], [self.h]
        else:
            mask = self.state_only_mask
            GT = np.zeros((self.GT.shape[0], n))
            GT[:, :self.nx] = self.GT
            Gs, hs = [self.G[mask], GT], [self.h[mask], self.hT]
        if self.obstacles:
            Go, ho = self.obstacle_rows(zk)
            Gs.append(Go)
            hs.append(ho)
        return np.vstack(Gs) if Gs else np.zeros((0, n)), np.concatenate(hs) if hs else np.zeros(0)

    def obstacle_rows(self, zk) -> tuple[np.ndarray, np.ndarray]:
        n = self.nx + self.nu
        G = np.zeros((len(self.obstacles), n))
        h = np.zeros(len(self.obstacles))
        for i, ob in enumerate(self.obstacles):
            d = np.asarray(zk)[ob.indices] - ob.center
            nrm = np.linalg.norm(d)
            nvec = d / nrm if nrm > 1e-9 else np.eye(len(d))[0]
            G[i, ob.indices] = -nvec
            h[i] = ob.radius + nvec @ ob.center
        return G, h

    def violation(self, k: int, T: int, x, u=None, terminal: bool = True) -> float:
        """Largest raw violation (positive means violated) at time ``k``.

        ``terminal=False`` leaves out the terminal rows at ``k = T``.
        """
        x = np.asarray(x, float)
        uu = np.zeros(self.nu) if u is None else np.asarray(u, float)
        worst = -np.inf
        if k < T:
            if self.G.shape[0]:
                worst = max(worst, float(np.max(self.G @ np.concatenate([x, uu]) + self.h)))
        else:
            mask = self.state_only_mask
            if mask.any():
                worst = max(worst, float(np.max(self.G[mask, :self.nx] @ x + self.h[mask])))
            if terminal and self.GT.shape[0]:
                worst = max(worst, float(np.max(self.GT @ x + self.hT)))
        for ob in self.obstacles:
            worst = max(worst, ob.radius - ob.distance(x))
        return worst

    def terminal_violation(self, x) -> float:
        if not self.GT.shape[0]:
            return -np.inf
        return float(np.max(self.GT @ np.asarray(x, float) + self.hT))


def _box_rows(lower, upper, offset, n, dim):
    G, h = [], []
    for i in range(dim):
        if upper is not None and np.isfinite(upper[i]):
            r = np.zeros(n)
            r[offset + i] = 1.0
            G.append(r)
            h.append(-upper[i])
        if lower is not None and np.isfinite(lower[i]):
            r = np.zeros(n)
            r[offset + i] = -1.0
            G.append(r)
            h.append(lower[i])
    return G, h


# --------------------------------------------------------------------------
# costs and noise
# --------------------------------------------------------------------------


@dataclass
class CostWeights:
    """Nominal tracking weights (``*bar``) and tube weights for the LQG cost."""

    Qbar: np.ndarray
    Rbar: np.ndarray
    Pbar: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray


@dataclass
class NoiseSpec:
    """Initial-state spread ``Xi``, process-noise matrix ``E`` and the
    linearization-error bound ``sigma(tau, z, v)`` (zero by default)."""

    Xi: np.ndarray
    E: np.ndarray
    sigma: Optional[Callable[[float, np.ndarray, np.ndarray], float]] = None
    sigma_cfg: dict = field(default_factory=lambda: {"id": "zero"})

    def E_at(self, z) -> np.ndarray:
        return self.E

    def sigma_at(self, tau, z, v) -> float:
        return 0.0 if self.sigma is None else float(self.sigma(tau, z, v))


def sigma_from_dict(d: Optional[dict]):
    if not d or d.get("id", "zero") == "zero":
        return None
    if d["id"] == "quadratic":
        coef = float(d["params"]["coef"])
        return lambda tau, z, v: coef * tau ** 2
    raise SpecError(f"unknown sigma id {d['id']!r}")


# --------------------------------------------------------------------------
# problem spec
# --------------------------------------------------------------------------


def _matrix(value, rows: int, cols: Optional[int] = None, name: str = "") -> np.ndarray:
    cols = rows if cols is None else cols
    if isinstance(value, dict):
        if "diag" in value:
            m = np.diag(np.asarray(value["diag"], float))
        elif "scaled_identity" in value:
            m = float(value["scaled_identity"]) * np.eye(rows)
        else:
            raise SpecError(f"{name}: unknown matrix form {sorted(value)}")
    else:
        m = np.atleast_2d(np.asarray(value, float))
    if m.shape != (rows, cols):
        raise SpecError(f"{name}: expected shape {(rows, cols)}, got {m.shape}")
    return m


@dataclass
class ProblemSpec:
    name: str
    T: int
    dt: float
    dynamics: DynamicsModel
    observation: ObservationModel
    constraints: ConstraintSet
    costs: CostWeights
    noise: NoiseSpec
    x0: np.ndarray
    goal: np.ndarray
    u_init: np.ndarray
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def nx(self) -> int:
        return self.dynamics.nx

    @property
    def nu(self) -> int:
        return self.dynamics.nu

    @property
    def nr(self) -> int:
        return self.observation.nr

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def with_changes(self, **changes) -> "ProblemSpec":
        """Copy with top-level JSON keys replaced, re-parsed from scratch."""
        d = self.to_dict()
        d.update(copy.deepcopy(changes))
        return ProblemSpec.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        try:
            return cls._from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"malformed problem spec: {exc!r}") from exc

    @classmethod
    def _from_dict(cls, d: dict) -> "ProblemSpec":
        dims = d["dims"]
        nx, nu, nr = int(dims["nx"]), int(dims["nu"]), int(dims["nr"])
        T, dt = int(d["horizon"]), float(d["dt"])
        dyn_cfg = d["dynamics"]
        try:
            dyn = DynamicsModel.from_id(dyn_cfg["id"], dt, dyn_cfg.get("params"))
        except KeyError as exc:
            raise SpecError(str(exc)) from exc
        if (dyn.nx, dyn.nu) != (nx, nu):
            raise SpecError(f"dynamics {dyn.name} has (nx, nu)={(dyn.nx, dyn.nu)}, dims say {(nx, nu)}")
        obs_cfg = d["observation"]
        Cr = _matrix(obs_cfg["Cr"], nr, nx, "observation.Cr")
        obs = ObservationModel(Cr, envelope_from_dict(obs_cfg["envelope"], nx))

        c = d.get("constraints", {})
        n = nx + nu
        G, h = [], []
        for key, off, dim in (("state_box", 0, nx), ("input_box", nx, nu)):
            if key in c:
                g_, h_ = _box_rows(_vec_or_none(c[key].get("lower")), _vec_or_none(c[key].get("upper")), off, n, dim)
                G += g_
                h += h_
        for row in c.get("rows", []):
            G.append(np.asarray(row["c"], float))
            h.append(float(row["b"]))
        GT, hT = [], []
        if "terminal_box" in c:
            GT, hT = _box_rows(_vec_or_none(c["terminal_box"].get("lower")),
                               _vec_or_none(c["terminal_box"].get("upper")), 0, nx, nx)
        for row in c.get("terminal_rows", []):
            GT.append(np.asarray(row["c"], float))
            hT.append(float(row["b"]))
        obstacles = [Obstacle(np.asarray(o["center"], float), float(o["radius"]), list(o["indices"]))
                     for o in c.get("obstacles", [])]
        for r in G:
            if r.shape != (n,):
                raise SpecError(f"constraint row has length {r.shape[0]}, expected {n}")
        cons = ConstraintSet(nx, nu,
                             np.array(G).reshape(-1, n), np.array(h, float),
                             np.array(GT).reshape(-1, nx), np.array(hT, float), obstacles,
                             str(c.get("terminal_mode", "soft")))
        if cons.terminal_mode not in TERMINAL_MODES:
            raise SpecError(f"constraints.terminal_mode must be one of {TERMINAL_MODES}")

        k = d["costs"]
        costs = CostWeights(
            _matrix(k["Qbar"], nx, name="costs.Qbar"), _matrix(k["Rbar"], nu, name="costs.Rbar"),
            _matrix(k["Pbar"], nx, name="costs.Pbar"), _matrix(k["Q"], nx, name="costs.Q"),
            _matrix(k["R"], nu, name="costs.R"), _matrix(k["P"], nx, name="costs.P"))
        nz = d["noise"]
        noise = NoiseSpec(_matrix(nz["Xi"], nx, name="noise.Xi"), _matrix(nz["E"], nx, name="noise.E"),
                          sigma_from_dict(nz.get("sigma")), nz.get("sigma", {"id": "zero"}))
        x0 = np.asarray(d["x0"], float)
        goal = np.asarray(d["goal"], float)
        u_init = np.asarray(d.get("u_init", np.zeros(nu)), float)
        if x0.shape != (nx,) or goal.shape != (nx,) or u_init.shape != (nu,):
            raise SpecError("x0/goal must have length nx and u_init length nu")
        return cls(d.get("name", "problem"), T, dt, dyn, obs, cons, costs, noise, x0, goal, u_init,
                   copy.deepcopy(d))


def _vec_or_none(v):
    if v is None:
        return None
    return np.array([np.inf if e is None else float(e) for e in v]) if isinstance(v, list) else np.asarray(v, float)


def load_spec(source) -> ProblemSpec:
    """Spec from a dict, a JSON file path, or a built-in benchmark name."""
    if isinstance(source, ProblemSpec):
        return source
    if isinstance(source, dict):
        return ProblemSpec.from_dict(source)
    path = Path(source)
    if path.is_file():
        try:
            return ProblemSpec.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON ({exc})") from exc
        except OSError as exc:
            raise SpecError(f"{path}: cannot read ({exc})") from exc
    from .environments import builtin_spec_dict

    name = path.name[:-5] if path.name.endswith(".json") else path.name
    try:
        return ProblemSpec.from_dict(builtin_spec_dict(name))
    except KeyError:
        raise SpecError(f"no spec file {source!r} and no built-in benchmark of that name") from None


def _is_pd(m: np.ndarray) -> bool:
    if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (m + m.T)).min() > 0)


def _is_psd(m: np.ndarray) -> bool:
    if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (m + m.T)).min() >= -1e-12 * max(1.0, np.abs(m).max()))


def validate_spec(spec: ProblemSpec) -> list[str]:
    """Human-readable violations; an empty list means the problem is usable."""
    out = []
    if spec.T < 1:
        out.append("horizon must be >= 1")
    if not spec.dt > 0:
        out.append("dt must be positive")
    c = spec.costs
    for name, m in (("Rbar", c.Rbar), ("R", c.R)):
        if not _is_pd(m):
            out.append(f"CostWeights.{_pretty(name)} not positive definite")
    for name, m in (("Qbar", c.Qbar), ("Pbar", c.Pbar), ("Q", c.Q), ("P", c.P)):
        if not _is_psd(m):
            out.append(f"CostWeights.{_pretty(name)} not positive semidefinite")
    all_rows = list(spec.constraints.G) + [np.concatenate([g, np.zeros(spec.nu)]) for g in spec.constraints.GT]
    for i, r in enumerate(all_rows):
        if not np.any(r != 0.0):
            out.append(f"ConstraintSet row {i} is zero")
    for name, m in (("Xi", spec.noise.Xi), ("E", spec.noise.E), ("Cr", spec.observation.Cr)):
        if not np.all(np.isfinite(m)):
            out.append(f"{name} has non-finite entries")
    for ob in spec.constraints.obstacles:
        if ob.radius <= 0 or len(ob.indices) != len(ob.center):
            out.append(f"obstacle at {ob.center.tolist()} is malformed")
    for x in _envelope_probe_points(spec):
        b = spec.observation.noise_scale(x)
        if not np.isfinite(b) or b < 0:
            out.append(f"envelope b(x) = {b} is negative or non-finite at x = {np.round(x, 6).tolist()}")
            break
    return out


def _pretty(name: str) -> str:
    return name[0] + "̄" if name.endswith("bar") else name


def _envelope_probe_points(spec: ProblemSpec, n: int = 64) -> Sequence[np.ndarray]:
    pts = [spec.x0, spec.goal]
    lo, hi = np.full(spec.nx, -np.inf), np.full(spec.nx, np.inf)
    box = spec.raw.get("constraints", {}).get("state_box")
    if box:
        lo = _vec_or_none(box.get("lower")) if box.get("lower") is not None else lo
        hi = _vec_or_none(box.get("upper")) if box.get("upper") is not None else hi
    lo = np.where(np.isfinite(lo), lo, spec.x0 - 1.0)
    hi = np.where(np.isfinite(hi), hi, spec.x0 + 1.0)
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)     # an inverted box is reported by synthesis
    rng = np.random.default_rng(0)
    pts += list(rng.uniform(lo, hi, size=(n, spec.nx)))
    return pts
