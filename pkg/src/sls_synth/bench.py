"""Horizon scaling of the structured LQG solver against the dense oracle.

Random instances: entries of ``A, B, C`` i.i.d. uniform on [-1, 1], ``A``
rescaled to spectral radius 0.95, ``E = F = Xi = 0.1 I`` and unit weights.
Times are the median of five runs after one discarded warm-up run.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .environments import make_rng
from .errors import OracleTooLarge, SlsSynthError
from .oracle import count_unknowns, dense_kkt_oracle
from .riccati import lqg_cost, solve_lqg
from .sls import StackedLtv

DEFAULT_HORIZONS = (10, 20, 40, 80)
ORACLE_GUARD = 4000      # unknowns; the dense KKT solve grows with the cube of this
TIMING_RUNS = 5
SPECTRAL_RADIUS = 0.95


@dataclass
class ScalingRecord:
    T: int
    n_x: int
    n_u: int
    n_r: int
    riccati_wall_ms: float
    oracle_wall_ms: float          # nan when the oracle was skipped or failed
    cost_riccati: float
    cost_oracle: float
    cost_rel_err: float
    note: str = ""


def random_instance(T: int, seed=0, nx: int = 2, nu: int = 2, nr: int = 2):
    """Time-varying instance and its unit weights ``(ltv, Q, R, P)``."""
    rng = make_rng(seed)
    A = rng.uniform(-1.0, 1.0, size=(T, nx, nx))
    for k in range(T):
        rho = max(abs(np.linalg.eigvals(A[k])))
        if rho > 0:
            A[k] *= SPECTRAL_RADIUS / rho
    B = rng.uniform(-1.0, 1.0, size=(T, nx, nu))
    C = rng.uniform(-1.0, 1.0, size=(T, nr, nx))
    E = np.repeat(0.1 * np.eye(nx)[None], T, axis=0)
    F = np.repeat(0.1 * np.eye(nr)[None], T, axis=0)
    ltv = StackedLtv(A, B, C, E, F, 0.1 * np.eye(nx))
    return ltv, np.eye(nx), np.eye(nu), np.eye(nx)


def _median_ms(fn, runs: int = TIMING_RUNS):
    out = fn()                                  # warm-up, discarded
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        out = fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times), out


def measure(T: int, seed=0, nx: int = 2, nu: int = 2, nr: int = 2, guard: int = ORACLE_GUARD,
            runs: int = TIMING_RUNS) -> ScalingRecord:
    ltv, Q, R, P = random_instance(T, seed, nx, nu, nr)
    nan = float("nan")
    try:
        t_ric, sol = _median_ms(lambda: solve_lqg(ltv, Q, R, P), runs)
        c_ric = lqg_cost(sol.maps, ltv, Q, R, P)
    except SlsSynthError as exc:
        return ScalingRecord(T, nx, nu, nr, nan, nan, nan, nan, nan, f"riccati failed: {exc}")
    if count_unknowns(T, nx, nu, nr) > guard:
        return ScalingRecord(T, nx, nu, nr, t_ric, nan, c_ric, nan, nan, "oracle skipped: above guard")
    try:
        t_or, res = _median_ms(lambda: dense_kkt_oracle(ltv, Q, R, P, max_unknowns=guard), runs)
    except (OracleTooLarge, SlsSynthError) as exc:
        return ScalingRecord(T, nx, nu, nr, t_ric, nan, c_ric, nan, nan, f"oracle failed: {exc}")
    rel = abs(c_ric - res.cost) / max(abs(res.cost), np.finfo(float).eps)
    return ScalingRecord(T, nx, nu, nr, t_ric, t_or, c_ric, res.cost, rel)


def horizon_sweep(seed=0, horizons: Sequence[int] = DEFAULT_HORIZONS, guard: int = ORACLE_GUARD,
                  runs: int = TIMING_RUNS) -> list[ScalingRecord]:
    """One record per horizon, run sequentially so timings do not interfere."""
    children = np.random.SeedSequence(seed).spawn(len(horizons))
    return [measure(T, ss, guard=guard, runs=runs) for T, ss in zip(horizons, children)]


def loglog_slope(records: Sequence[ScalingRecord], column: str) -> Optional[float]:
    """Least-squares slope of ``log(time)`` against ``log(T)``; ``None`` with fewer than two points."""
    pts = [(r.T, getattr(r, column)) for r in records if np.isfinite(getattr(r, column))]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def write_scaling_csv(path, records: Sequence[ScalingRecord]) -> None:
    names = [f.name for f in fields(ScalingRecord)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in records:
            row = asdict(r)
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in (row[n] for n in names)])
