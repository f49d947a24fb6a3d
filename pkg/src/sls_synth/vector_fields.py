"""Continuous-time vector fields for the built-in benchmarks.

Each field is registered under a string id together with its analytic
Jacobian.  ``f(x, u, params)`` returns the state derivative and
``jac(x, u, params)`` returns ``(df/dx, df/du)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

GRAVITY = 9.81


@dataclass(frozen=True)
class VectorField:
    nx: int
    nu: int
    f: Callable[[np.ndarray, np.ndarray, dict], np.ndarray]
    jac: Optional[Callable[[np.ndarray, np.ndarray, dict], tuple]] = None
    state_names: tuple = ()


def _integrator_f(x, u, params):
    return np.asarray(u, dtype=float).copy()


def _integrator_jac(x, u, params):
    n = len(x)
    return np.zeros((n, n)), np.eye(n)


def _dubins_f(x, u, params):
    _, _, th, v = x
    return np.array([v * np.cos(th), v * np.sin(th), u[0], u[1]])


def _dubins_jac(x, u, params):
    _, _, th, v = x
    jx = np.zeros((4, 4))
    jx[0, 2] = -v * np.sin(th)
    jx[0, 3] = np.cos(th)
    jx[1, 2] = v * np.cos(th)
    jx[1, 3] = np.sin(th)
    ju = np.zeros((4, 2))
    ju[2, 0] = 1.0
    ju[3, 1] = 1.0
    return jx, ju


def _quad_f(x, u, params):
    g = params.get("gravity", GRAVITY)
    vx, vy, vz = x[3:6]
    tx, ty, wx, wy = x[6:10]
    return np.array([
        vx,
        vy,
        vz,
        g * np.tan(tx) - 3.0 * vx,
        g * np.tan(ty) - 3.0 * vy,
        u[2] - g - vz,
        -10.0 * tx + wx,
        -10.0 * ty + wy,
        -10.0 * tx + 50.0 * u[0],
        -10.0 * ty + 50.0 * u[1],
    ])


def _quad_jac(x, u, params):
    g = params.get("gravity", GRAVITY)
    tx, ty = x[6], x[7]
    jx = np.zeros((10, 10))
    jx[0, 3] = jx[1, 4] = jx[2, 5] = 1.0
    jx[3, 3] = jx[4, 4] = -3.0
    jx[5, 5] = -1.0
    jx[3, 6] = g / np.cos(tx) ** 2
    jx[4, 7] = g / np.cos(ty) ** 2
    jx[6, 6] = jx[7, 7] = -10.0
    jx[6, 8] = jx[7, 9] = 1.0
    jx[8, 6] = jx[9, 7] = -10.0
    ju = np.zeros((10, 3))
    ju[5, 2] = 1.0
    ju[8, 0] = ju[9, 1] = 50.0
    return jx, ju


REGISTRY: dict[str, VectorField] = {
    "single_integrator_2d": VectorField(2, 2, _integrator_f, _integrator_jac, ("px", "py")),
    "dubins_car": VectorField(4, 2, _dubins_f, _dubins_jac, ("px", "py", "theta", "v")),
    "quadrotor": VectorField(10, 3, _quad_f, _quad_jac,
                             ("px", "py", "pz", "vx", "vy", "vz", "tx", "ty", "wx", "wy")),
}


def get_vector_field(name: str) -> VectorField:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown dynamics id {name!r}; known: {sorted(REGISTRY)}") from None
