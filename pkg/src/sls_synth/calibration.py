"""Perception-error envelopes and the observability metric.

An envelope ``b(x) = beta @ m(x)`` is fitted to residuals ``r_i`` by the
hinge program

    min_{beta, xi >= 0}  sum_i beta @ m(x_i) + gamma |beta|^2 + mu sum_i xi_i
    s.t.                 beta @ m(x_i) >= r_i - xi_i

which pushes ``b`` down onto the data from above and pays ``mu`` per unit of
residual left uncovered.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .environments import make_rng
from .errors import FitUnbounded, QpInfeasible, SpecError
from .model import DynamicsModel, PolynomialEnvelope, discretize_step, linearize, monomial_exponents
from .qp import QpUnbounded, QuadraticProgram, solve_qp

DEFAULT_GAMMA = 1e-4
DEFAULT_MU = 1e3

# coordinates and total degree of the default basis per benchmark
DEFAULT_BASIS = {
    "lightdark": "px:2",
    "car": "px,py:3",
    "quadrotor": "px,py,pz:4",
}


@dataclass
class ResidualDataset:
    X: np.ndarray                # (N, nx) states
    r: np.ndarray                # (N,) residuals, nonnegative
    names: tuple = ()            # column names of X, if known

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, float))
        self.r = np.asarray(self.r, float).ravel()
        if self.X.shape[0] != self.r.size:
            raise SpecError(f"{self.X.shape[0]} states but {self.r.size} residuals")
        if np.any(self.r < 0) or not np.all(np.isfinite(self.r)):
            raise SpecError("residuals must be finite and nonnegative")

    def __len__(self) -> int:
        return self.r.size

    def subset(self, idx) -> "ResidualDataset":
        return ResidualDataset(self.X[idx], self.r[idx], self.names)


def read_residuals(path) -> ResidualDataset:
    """CSV with a header: state coordinates first, then a column ``r``."""
    path = Path(path)
    if not path.is_file():
        raise SpecError(f"residual file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise SpecError(f"{path}: need a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    if header[-1] != "r":
        raise SpecError(f"{path}: last column must be 'r', got {header[-1]!r}")
    try:
        data = np.array([[float(c) for c in row] for row in rows[1:] if row], float)
    except ValueError as exc:
        raise SpecError(f"{path}: {exc}") from exc
    if data.shape[1] != len(header):
        raise SpecError(f"{path}: rows do not match the header width {len(header)}")
    return ResidualDataset(data[:, :-1], data[:, -1], tuple(header[:-1]))


def write_residuals(path, data: ResidualDataset) -> None:
    names = data.names or tuple(f"x{i}" for i in range(data.X.shape[1]))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "r"])
        for x, r in zip(data.X, data.r):
            w.writerow([f"{v:.17g}" for v in (*x, r)])


@dataclass(frozen=True)
class MonomialBasis:
    indices: tuple
    degree: int
    names: tuple = ()

    @property
    def exponents(self) -> list:
        return monomial_exponents(len(self.indices), self.degree)

    @property
    def size(self) -> int:
        return len(self.exponents)

    def features(self, X) -> np.ndarray:
        P = np.atleast_2d(np.asarray(X, float))[:, list(self.indices)]
        E = np.asarray(self.exponents, int)
        return np.prod(P[:, None, :] ** E[None], axis=-1)


def parse_basis(text: str, names: Sequence[str]) -> MonomialBasis:
    """``"px,py:3"`` -> total-degree-3 monomials in the columns named px and py."""
    coords, sep, deg = text.partition(":")
    if not sep:
        raise SpecError(f"basis {text!r} must look like 'name,name:degree'")
    try:
        degree = int(deg)
    except ValueError:
        raise SpecError(f"basis degree {deg!r} is not an integer") from None
    if degree < 0:
        raise SpecError("basis degree must be nonnegative")
    wanted = [c.strip() for c in coords.split(",") if c.strip()]
    if not wanted:
        raise SpecError(f"basis {text!r} names no coordinates")
    idx = []
    for c in wanted:
        if c in names:
            idx.append(list(names).index(c))
        elif c.isdigit() and int(c) < len(names):
            idx.append(int(c))
        else:
            raise SpecError(f"unknown coordinate {c!r}; available: {', '.join(names)}")
    return MonomialBasis(tuple(idx), degree, tuple(names[i] for i in idx))


@dataclass
class EnvelopeFit:
    envelope: PolynomialEnvelope
    basis: MonomialBasis
    slacks: np.ndarray
    gamma: float
    mu: float
    objective: float

    def __call__(self, X) -> np.ndarray:
        return self.basis.features(X) @ self.envelope.beta

    def to_json(self) -> dict:
        return {"envelope": self.envelope.to_dict(), "degree": self.basis.degree,
                "gamma": self.gamma, "mu": self.mu, "objective": self.objective,
                "n_points": int(self.slacks.size), "total_slack": float(self.slacks.sum())}


def fit_envelope(data: ResidualDataset, basis: MonomialBasis, gamma: float = DEFAULT_GAMMA,
                 mu: float = DEFAULT_MU) -> EnvelopeFit:
    """Solve the hinge program above for ``beta`` and the slacks ``xi``."""
    if gamma < 0 or mu < 0:
        raise SpecError("gamma and mu must be nonnegative")
    M = basis.features(data.X)
    N, p = M.shape
    if N < p:
        raise SpecError(f"{N} samples cannot determine a basis of size {p}")
    if gamma == 0 and mu < 1:
        # lowering the constant coefficient by t gains N t and costs at most mu N t
        raise FitUnbounded(f"with gamma = 0 and mu = {mu} < 1 the fit objective has no lower bound")
    P = sp.block_diag([sp.identity(p) * 2.0 * gamma, sp.csc_matrix((N, N))], format="csc")
    q = np.concatenate([M.sum(axis=0), np.full(N, float(mu))])
    A = sp.vstack([sp.hstack([sp.csc_matrix(M), sp.identity(N)]),
                   sp.hstack([sp.csc_matrix((N, p)), sp.identity(N)])], format="csc")
    lo = np.concatenate([data.r, np.zeros(N)])
    hi = np.full(2 * N, np.inf)
    qp = QuadraticProgram(P, q, A, lo, hi)
    try:
        # nearly an LP with a degenerate optimal face: ADMM crawls here, interior point does not
        sol = solve_qp(qp, eps=1e-10, method="clarabel")
    except QpUnbounded as exc:
        raise FitUnbounded(str(exc)) from exc
    except QpInfeasible as exc:   # cannot happen for a well-posed dataset; keep the type honest
        raise FitUnbounded(f"envelope fit failed: {exc}") from exc
    beta = sol.x[:p]
    # report the slack the realized beta actually needs, not the solver's copy
    slacks = np.maximum(data.r - M @ beta, 0.0)
    nx = data.X.shape[1]
    env = PolynomialEnvelope(basis.indices, basis.exponents, beta, nx, basis.names or None)
    obj = float(M.sum(axis=0) @ beta + gamma * beta @ beta + mu * slacks.sum())
    return EnvelopeFit(env, basis, slacks, float(gamma), float(mu), obj)


def coverage(envelope, held_out: ResidualDataset) -> float:
    """Fraction of points with ``r_i <= b(x_i)``; ``envelope`` is any callable or :class:`Envelope`."""
    if len(held_out) == 0:
        raise ValueError("coverage of an empty dataset is undefined")
    if hasattr(envelope, "value"):
        b = np.array([envelope.value(x) for x in held_out.X])
    else:
        b = np.asarray(envelope(held_out.X), float).ravel()
    return float(np.mean(held_out.r <= b))


# --------------------------------------------------------------------------
# observability
# --------------------------------------------------------------------------


def observability_matrix(dyn: DynamicsModel, Cr, x_hat, u_seq):
    """Stacked outputs ``C^r x_1, ..., C^r x_n`` along ``x_{i+1} = f(x_i, u_i)``, ``x_0 = x_hat``.

    Returns ``(outputs, jacobian)`` with the Jacobian taken with respect to
    ``x_hat`` by chaining the step Jacobians.
    """
    Cr = np.atleast_2d(np.asarray(Cr, float))
    u_seq = np.atleast_2d(np.asarray(u_seq, float))
    if u_seq.shape[0] < 1:
        raise ValueError("need at least one input")
    x = np.asarray(x_hat, float)
    S = np.eye(dyn.nx)
    outs, jac = [], []
    for u in u_seq:
        lin = linearize(dyn, x, u)
        x = lin.x_next
        S = lin.A @ S
        outs.append(Cr @ x)
        jac.append(Cr @ S)
    return np.concatenate(outs), np.vstack(jac)


def observability_metric(dyn: DynamicsModel, Cr, x_hat, u_seq) -> float:
    """Smallest singular value of the stacked-output Jacobian (zero if it has fewer rows than columns)."""
    _, J = observability_matrix(dyn, Cr, x_hat, u_seq)
    if J.shape[0] < J.shape[1]:
        return 0.0
    return float(np.linalg.svd(J, compute_uv=False).min())


def observability_loss(reduced_obs, x, Cr, dyn: DynamicsModel, x_hat, u_seq, lam: float) -> float:
    """Feature-matching error ``|y^r - C^r x|_2`` minus ``lam`` times the observability metric.

    Evaluation only: ``reduced_obs`` comes from a fixed projection.
    """
    Cr = np.atleast_2d(np.asarray(Cr, float))
    match = float(np.linalg.norm(np.asarray(reduced_obs, float) - Cr @ np.asarray(x, float)))
    return match - lam * observability_metric(dyn, Cr, x_hat, u_seq)


def stacked_outputs(dyn: DynamicsModel, Cr, x_hat, u_seq) -> np.ndarray:
    """The outputs of :func:`observability_matrix` without the Jacobian; handy for finite differences."""
    Cr = np.atleast_2d(np.asarray(Cr, float))
    x = np.asarray(x_hat, float)
    out = []
    for u in np.atleast_2d(np.asarray(u_seq, float)):
        x = discretize_step(dyn, x, u)
        out.append(Cr @ x)
    return np.concatenate(out)


def quadratic_generator(coef: float = 0.02, center: float = 2.0, spread: float = 0.005,
                        lower: float = -2.0, upper: float = 6.0):
    """Synthetic residual source with known envelope ``coef (p_x - center)^2``.

    Returns ``(sample, truth)`` where ``sample(n, rng)`` gives a
    :class:`ResidualDataset` over ``p_x ~ U[lower, upper]``.
    """
    def truth(X):
        X = np.atleast_2d(X)
        return coef * (X[:, 0] - center) ** 2

    def sample(n: int, rng: np.random.Generator) -> ResidualDataset:
        X = rng.uniform(lower, upper, size=(n, 1))
        return ResidualDataset(X, truth(X) + rng.uniform(0.0, spread, size=n), ("px",))

    return sample, truth


def coverage_curve(sizes: Sequence[int], seed: int = 0, repeats: int = 10, n_test: int = 5000,
                   generator=None, basis: Optional[MonomialBasis] = None,
                   gamma: float = DEFAULT_GAMMA, mu: float = DEFAULT_MU) -> list[tuple[int, float]]:
    """Mean held-out coverage of fits on calibration sets of each size.

    Every repeat draws one calibration pool and fits on its nested prefixes,
    so sizes are compared on shared data; the test set is common to all.
    """
    sample, _ = generator if generator is not None else quadratic_generator()
    basis = basis or MonomialBasis((0,), 2, ("px",))
    test_ss, *pool_ss = np.random.SeedSequence(seed).spawn(repeats + 1)
    test = sample(n_test, make_rng(test_ss))
    totals = np.zeros(len(sizes))
    for ss in pool_ss:
        pool = sample(max(sizes), make_rng(ss))
        for i, n in enumerate(sizes):
            fit = fit_envelope(pool.subset(slice(0, n)), basis, gamma, mu)
            totals[i] += coverage(fit, test)
    return [(int(n), float(t / repeats)) for n, t in zip(sizes, totals)]
