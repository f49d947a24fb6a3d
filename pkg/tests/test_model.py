import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from helpers import spec_dict
from sls_synth.environments import builtin_spec_dict, load_benchmark
from sls_synth.errors import IntegrationDiverged, SpecError
from sls_synth.model import DynamicsModel, discretize_step, linearize, load_spec, validate_spec
from sls_synth.vector_fields import GRAVITY


def dubins_rate(x, u):
    return np.array([x[3] * np.cos(x[2]), x[3] * np.sin(x[2]), u[0], u[1]])


def euler(rate, x, u, dt, h=1e-5):
    x = np.array(x, float)
    for _ in range(int(round(dt / h))):
        x = x + h * rate(x, u)
    return x


def reference_step(rate, x, u, dt):
    sol = solve_ivp(lambda t, s: rate(s, u), (0.0, dt), x, method="DOP853", rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


@pytest.fixture(scope="module")
def models():
    return {name: load_benchmark(name).spec.dynamics for name in ("lightdark", "car", "quadrotor")}


def test_integrator_zero_input_stays_put(models):
    assert np.array_equal(discretize_step(models["lightdark"], [0.0, 2.0], [0.0, 0.0], 0.2), [0.0, 2.0])


def test_integrator_constant_rate_is_exact(models):
    np.testing.assert_allclose(discretize_step(models["lightdark"], [0.0, 0.0], [1.0, 0.0], 0.2), [0.2, 0.0],
                               atol=1e-15)


def test_car_straight_line_matches_fine_euler(models):
    x1 = discretize_step(models["car"], [0, 0, 0, 1], [0, 0], 0.15)
    assert x1[0] == pytest.approx(0.15, abs=1e-14)
    np.testing.assert_allclose(x1, euler(dubins_rate, [0, 0, 0, 1], [0, 0], 0.15), atol=1e-9)


def test_car_turning_step_matches_fine_euler(models):
    x0, u = [0.3, -0.2, 0.4, 1.2], [0.5, -0.3]
    # Euler with h = 1e-5 carries O(h) error, so compare at that level
    np.testing.assert_allclose(discretize_step(models["car"], x0, u, 0.15), euler(dubins_rate, x0, u, 0.15),
                               atol=1e-5)


def test_rk4_error_drops_by_at_least_eight_when_dt_halves(models):
    x0, u = np.array([0.1, 0.2, 0.7, 1.5]), np.array([1.0, 0.5])
    errs = []
    for dt in (0.3, 0.15):
        errs.append(np.abs(discretize_step(models["car"], x0, u, dt) - reference_step(dubins_rate, x0, u, dt)).max())
    assert errs[0] / errs[1] >= 8.0


def test_divergent_step_raises():
    dyn = DynamicsModel.from_id("quadrotor", 0.15)
    x = np.zeros(10)
    x[6] = np.pi / 2          # tan blows up
    with pytest.raises(IntegrationDiverged):
        discretize_step(dyn, x, np.zeros(3))


def test_integrator_linearization_is_identity_and_dt(models):
    lin = linearize(models["lightdark"], [0.3, -1.0], [0.2, 0.1])
    np.testing.assert_allclose(lin.A, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(lin.B, 0.2 * np.eye(2), atol=1e-15)


def test_car_at_rest_speed_enters_position(models):
    lin = linearize(models["car"], np.zeros(4), np.zeros(2))
    fd = linearize(models["car"], np.zeros(4), np.zeros(2), method="fd")
    assert lin.A[0, 3] == pytest.approx(0.15, rel=1e-12)   # d px+ / d v = dt cos(0)
    np.testing.assert_allclose(lin.A, fd.A, rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(lin.B, fd.B, rtol=1e-5, atol=1e-9)


def test_quadrotor_hover_tilt_gain_is_gravity(models):
    jx, _ = models["quadrotor"].rhs_jacobian(np.zeros(10), np.array([0.0, 0.0, GRAVITY]))
    assert jx[3, 6] == pytest.approx(GRAVITY)
    assert jx[4, 7] == pytest.approx(GRAVITY)


@pytest.mark.parametrize("name", ["lightdark", "car", "quadrotor"])
def test_analytic_and_fd_jacobians_agree(models, name):
    dyn = models[name]
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(-1, 1, dyn.nx)
        u = rng.uniform(-1, 1, dyn.nu)
        a = linearize(dyn, x, u, "analytic")
        f = linearize(dyn, x, u, "fd")
        for M, N in ((a.A, f.A), (a.B, f.B)):
            np.testing.assert_allclose(M, N, rtol=1e-5, atol=1e-7 * max(1.0, np.abs(N).max()))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_linear_model_linearization_is_exact(vals):
    dyn = DynamicsModel.from_id("single_integrator_2d", 0.2)
    z, v, dz, dv = (np.array(vals[i:i + 2]) for i in range(0, 8, 2))
    lin = linearize(dyn, z, v)
    resid = discretize_step(dyn, z + dz, v + dv) - discretize_step(dyn, z, v) - lin.A @ dz - lin.B @ dv
    assert np.abs(resid).max() <= 1e-12 * max(1.0, np.abs(vals).max())


def test_builtin_specs_validate():
    for name in ("lightdark", "car", "quadrotor"):
        assert validate_spec(load_benchmark(name).spec) == []


def test_zero_input_weight_is_reported():
    d = builtin_spec_dict("lightdark")
    d["costs"]["Rbar"] = {"diag": [0.0, 0.0]}
    assert validate_spec(load_spec(d)) == ["CostWeights.R̄ not positive definite"]


def test_zero_constraint_row_is_reported():
    d = spec_dict("lightdark", rows=[{"c": [0.0, 0.0, 0.0, 0.0], "b": -1.0}])
    # the two boxes contribute 4 + 4 rows ahead of the explicit one
    problems = validate_spec(load_spec(d))
    assert problems == ["ConstraintSet row 8 is zero"]


def test_light_dark_constants():
    s = load_benchmark("lightdark").spec
    assert (s.T, s.dt) == (20, 0.2)
    np.testing.assert_array_equal(s.noise.Xi, 0.05 * np.eye(2))
    np.testing.assert_array_equal(s.noise.E, 0.05 * np.eye(2))
    assert s.observation.noise_scale([0.0, 2.0]) == pytest.approx(0.08)
    np.testing.assert_array_equal(s.x0, [0, 2])
    np.testing.assert_array_equal(s.goal, [0, 0])


def test_car_and_quadrotor_dimensions():
    car = load_benchmark("car").spec
    quad = load_benchmark("quadrotor").spec
    assert (car.nx, car.nu, car.nr, car.T, car.dt) == (4, 2, 3, 30, 0.15)
    assert (quad.nx, quad.nu, quad.nr, quad.T, quad.dt) == (10, 3, 5, 35, 0.15)
    assert np.all(car.observation.Cr[:, 3] == 0)
    np.testing.assert_array_equal(car.noise.Xi, 0.01 * np.eye(4))
    np.testing.assert_array_equal(quad.noise.E, 0.01 * np.eye(10))


def test_malformed_specs_raise_spec_error(tmp_path):
    with pytest.raises(SpecError, match="missing.json"):
        load_spec("missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SpecError, match="invalid JSON"):
        load_spec(bad)
    d = copy.deepcopy(builtin_spec_dict("lightdark"))
    d["dims"]["nx"] = 3
    with pytest.raises(SpecError):
        load_spec(d)
