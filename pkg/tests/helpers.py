import numpy as np

from sls_synth.environments import builtin_spec_dict
from sls_synth.sls import StackedLtv


def random_ltv(rng, T, nx, nu, nr, scale=1.0):
    """Random time-varying system with invertible diagonal noise scalings."""
    A = rng.uniform(-1, 1, (T, nx, nx)) * scale
    B = rng.uniform(-1, 1, (T, nx, nu))
    C = rng.uniform(-1, 1, (T, nr, nx))
    E = np.stack([np.diag(rng.uniform(0.1, 1.0, nx)) for _ in range(T)])
    F = np.stack([np.diag(rng.uniform(0.1, 1.0, nr)) for _ in range(T)])
    Xi = np.diag(rng.uniform(0.1, 1.0, nx))
    return StackedLtv(A, B, C, E, F, Xi)


def random_pd(rng, n, floor=0.1):
    G = rng.normal(size=(n, n))
    return G @ G.T + floor * np.eye(n)


def spec_dict(name, **constraint_changes):
    d = builtin_spec_dict(name)
    d["constraints"].update(constraint_changes)
    return d
