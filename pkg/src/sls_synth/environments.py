"""Benchmarks, disturbance sampling and closed-loop Monte Carlo rollouts.

Rollouts run the true nonlinear step, not the linearization the controller
was designed on:

    x_0     = xbar_0 + Xi w~
    y_{k+1} = C^r x_k + b(x_k) e_k
    u_k     = v_k + K0_k (x_0 - xbar_0) + sum_{j<k} K_{k,j} (y_{j+1} - C^r z_j)
    x_{k+1} = step(x_k, u_k) + E(x_k) w_k

All randomness comes from Philox streams spawned off one seed, so a report is
reproducible for a fixed seed regardless of the number of worker threads.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .errors import IntegrationDiverged, RolloutDiverged
from .model import ProblemSpec, discretize_step, load_spec

BENCHMARKS = ("lightdark", "car", "quadrotor")

# Deviations this close to the tube edge still count as contained.
CONTAINMENT_TOL = 1e-9


def builtin_spec_dict(name: str) -> dict:
    if name not in BENCHMARKS:
        raise KeyError(name)
    return json.loads(resources.files("sls_synth").joinpath("data", f"{name}.json").read_text())


@dataclass
class BenchmarkSpec:
    name: str
    spec: ProblemSpec
    synthetic: tuple = ()     # spec keys holding made-up data rather than published constants


def load_benchmark(name: str) -> BenchmarkSpec:
    d = builtin_spec_dict(name)
    return BenchmarkSpec(name, load_spec(d), tuple(d.get("synthetic", ())))


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; ``seed`` may be an int or a ``SeedSequence``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def sample_disturbance(mode: str, nx: int, nr: int, T: int, seed=None, rng=None):
    """Unit-box disturbance ``w`` of shape ``(T+1, nx)`` (row 0 is ``w~``) and noise ``e`` ``(T, nr)``.

    ``uniform`` draws entries from [-1, 1]; ``extreme`` draws them from {-1, +1}.
    """
    rng = make_rng(seed) if rng is None else rng
    if mode == "uniform":
        w = rng.uniform(-1.0, 1.0, size=(T + 1, nx))
        e = rng.uniform(-1.0, 1.0, size=(T, nr))
    elif mode == "extreme":
        w = rng.choice((-1.0, 1.0), size=(T + 1, nx))
        e = rng.choice((-1.0, 1.0), size=(T, nr))
    else:
        raise ValueError(f"unknown disturbance mode {mode!r}")
    return w, e


@dataclass
class RolloutResult:
    x: np.ndarray            # (T+1, nx)
    u: np.ndarray            # (T, nu)
    y: np.ndarray            # (T, nr); y[k] is the measurement y_{k+1}
    contained: np.ndarray    # (T+1, nx+nu) bool; input columns are True at k = T
    violated: np.ndarray     # (T+1,) bool, raw constraints without the terminal rows
    terminal_ok: bool
    excursion: float         # max |deviation| / half-width over entries with positive half-width
    diverged: bool = False

    @property
    def any_violation(self) -> bool:
        return self.diverged or bool(self.violated.any())

    @property
    def success(self) -> bool:
        return self.terminal_ok and not self.any_violation

    @property
    def fully_contained(self) -> bool:
        return not self.diverged and bool(self.contained.all())


def _diverged_result(spec: ProblemSpec, x, u, y) -> RolloutResult:
    T, nx, nu = spec.T, spec.nx, spec.nu
    return RolloutResult(x, u, y, np.zeros((T + 1, nx + nu), bool), np.ones(T + 1, bool), False,
                         np.inf, diverged=True)


def rollout(result, w, e, feedback: bool = True, raise_on_divergence: bool = False) -> RolloutResult:
    """Closed loop of the true system under the affine policy stored in ``result``.

    ``feedback=False`` zeroes every gain, which replays the nominal inputs
    open loop.
    """
    spec: ProblemSpec = result.spec
    T, nx, nu, nr = spec.T, spec.nx, spec.nu, spec.nr
    z, v, gains, radii = result.z, result.v, result.gains, result.radii
    Cr = spec.observation.Cr
    w = np.asarray(w, float)
    e = np.asarray(e, float)

    x = np.full((T + 1, nx), np.nan)
    u = np.full((T, nu), np.nan)
    y = np.full((T, nr), np.nan)
    dy = np.zeros((T, nr))
    x[0] = spec.x0 + spec.noise.Xi @ w[0]
    dx0 = x[0] - spec.x0
    try:
        for k in range(T):
            uk = v[k].copy()
            if feedback:
                uk += gains.K0[k] @ dx0
                if k:
                    uk += np.einsum("jab,jb->a", gains.K[k, :k], dy[:k])
            u[k] = uk
            y[k] = Cr @ x[k] + spec.observation.noise_scale(x[k]) * e[k]
            dy[k] = y[k] - Cr @ z[k]
            x[k + 1] = discretize_step(spec.dynamics, x[k], uk) + spec.noise.E_at(x[k]) @ w[k + 1]
            if not np.all(np.isfinite(x[k + 1])):
                raise IntegrationDiverged(f"non-finite state at step {k + 1}")
    except IntegrationDiverged as exc:
        if raise_on_divergence:
            raise RolloutDiverged(str(exc)) from exc
        return _diverged_result(spec, x, u, y)

    dev = np.zeros((T + 1, nx + nu))
    dev[:, :nx] = np.abs(x - z)
    dev[:T, nx:] = np.abs(u - v)
    contained = dev <= radii + CONTAINMENT_TOL
    contained[T, nx:] = True
    pos = radii > 0
    pos[T, nx:] = False
    excursion = float(np.max(dev[pos] / radii[pos], initial=0.0))
    cons = spec.constraints
    violated = np.array([cons.violation(k, T, x[k], u[k] if k < T else None, terminal=False) > 0
                         for k in range(T + 1)])
    terminal_ok = cons.terminal_violation(x[T]) <= 0
    return RolloutResult(x, u, y, contained, violated, bool(terminal_ok), excursion)


@dataclass
class MonteCarloReport:
    n: int
    mode: str
    seed: int
    success_rate: float
    violation_rate: float
    containment_rate: float      # fraction of rollouts entirely inside the tubes
    terminal_rate: float
    max_excursion: float
    diverged: int
    rollouts: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {"n": self.n, "mode": self.mode, "seed": self.seed, "SR": self.success_rate,
                "CVR": self.violation_rate, "containment": self.containment_rate,
                "terminal_rate": self.terminal_rate, "max_excursion": self.max_excursion,
                "diverged": self.diverged}


def default_threads() -> int:
    env = os.environ.get("SLS_SYNTH_THREADS")
    if env:
        return max(1, int(env))
    return 1


def monte_carlo(result, n: int = 50, mode: str = "uniform", seed: int = 0,
                threads: Optional[int] = None, feedback: bool = True) -> MonteCarloReport:
    """``n`` rollouts with disturbances from per-rollout child seeds of ``seed``."""
    if n < 1:
        raise ValueError("need at least one rollout")
    spec = result.spec
    children = np.random.SeedSequence(seed).spawn(n)

    def one(ss):
        w, e = sample_disturbance(mode, spec.nx, spec.nr, spec.T, seed=ss)
        return rollout(result, w, e, feedback=feedback)

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1:
        runs = [one(ss) for ss in children]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(one, children))
    return MonteCarloReport(
        n, mode, int(seed),
        success_rate=sum(r.success for r in runs) / n,
        violation_rate=sum(r.any_violation for r in runs) / n,
        containment_rate=sum(r.fully_contained for r in runs) / n,
        terminal_rate=sum(r.terminal_ok for r in runs) / n,
        max_excursion=max(r.excursion for r in runs),
        diverged=sum(r.diverged for r in runs),
        rollouts=runs,
    )


def synthetic_residuals(envelope, lower, upper, n: int, seed=0, spread: float = 0.005,
                        indices: Optional[list] = None):
    """States drawn uniformly from a box and residuals ``envelope(x) + U[0, spread]``.

    ``envelope`` maps a state vector to the true error level.  Returns
    ``(X, r)`` with ``X`` of shape ``(n, len(lower))``.
    """
    rng = make_rng(seed)
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    X = rng.uniform(lower, upper, size=(n, lower.size))
    base = np.array([envelope(x) for x in X])
    r = np.maximum(base + rng.uniform(0.0, spread, size=n), 0.0)
    return X, r
