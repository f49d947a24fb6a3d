import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_ltv, random_pd
from sls_synth.errors import InvalidEnvelope, OracleTooLarge
from sls_synth.riccati import solve_lqg
from sls_synth.sls import ResponseMaps, apply_response
from sls_synth.tubes import (TubeParams, build_scalings, constraint_rows, scaled_ltv, tighten, tube_radii,
                             vertex_oracle)


def lqg_maps(ltv, rng):
    return solve_lqg(ltv, random_pd(rng, ltv.nx), random_pd(rng, ltv.nu), random_pd(rng, ltv.nx)).maps


def random_tubes(rng, T, nx, nr):
    Sigma = np.stack([np.diag(rng.uniform(0.0, 1.0, nx)) for _ in range(T + 1)])
    Upsilon = np.stack([rng.uniform(0.0, 1.0) * np.eye(nr) for _ in range(T)])
    return TubeParams(Sigma, Upsilon, np.zeros(T + 1))


def random_rows(rng, T, nx, nu, m=3):
    return [(rng.normal(size=(m, nx + nu)), rng.normal(size=m)) for _ in range(T + 1)]


def nominal_path(rng, T, nx, nu):
    return rng.normal(size=(T + 1, nx)), rng.normal(size=(T, nu))


def test_light_dark_envelope_at_start(lightdark_spec):
    s = lightdark_spec
    z = np.tile([0.0, 2.0], (s.T + 1, 1))
    tubes = build_scalings(s, z, np.zeros((s.T, s.nu)))
    np.testing.assert_allclose(tubes.Upsilon[0], 0.08 * np.eye(s.nr), rtol=1e-14)
    np.testing.assert_allclose(tubes.b, 0.08, rtol=1e-14)


def test_constant_process_noise_scaling(lightdark_spec):
    s = lightdark_spec
    rng = np.random.default_rng(1)
    tubes = build_scalings(s, rng.normal(size=(s.T + 1, 2)), rng.normal(size=(s.T, 2)))
    np.testing.assert_array_equal(tubes.Sigma[0], s.noise.Xi)
    for j in range(1, s.T + 1):
        np.testing.assert_array_equal(tubes.Sigma[j], 0.05 * np.eye(2))
    assert not tubes.tau.any()


def test_negative_envelope_is_rejected(lightdark_spec):
    import dataclasses

    class Negative:
        def value(self, x):
            return -1.0

    obs = dataclasses.replace(lightdark_spec.observation, envelope=Negative())
    spec = dataclasses.replace(lightdark_spec, observation=obs)
    with pytest.raises(InvalidEnvelope):
        build_scalings(spec, np.zeros((spec.T + 1, 2)), np.zeros((spec.T, 2)))


def test_zero_scalings_give_zero_margins(rng):
    ltv = random_ltv(rng, 4, 3, 2, 2)
    maps = lqg_maps(ltv, rng)
    tubes = TubeParams(np.zeros((5, 3, 3)), np.zeros((4, 2, 2)), np.zeros(5))
    z, v = nominal_path(rng, 4, 3, 2)
    rows = random_rows(rng, 4, 3, 2)
    rep = tighten(maps, tubes, rows, z, v, tighten_terminal=True)
    assert all(not m.any() for m in rep.margins)
    for k, (G, h) in enumerate(rows):
        u = v[k] if k < 4 else np.zeros(2)
        np.testing.assert_allclose(rep.slack[k], -(G @ np.concatenate([z[k], u]) + h), atol=1e-14)
    assert not tube_radii(maps, tubes).any()


def test_scalar_margin_by_hand():
    a, s0, s1 = -0.7, 0.3, 0.2
    maps = ResponseMaps.zeros(1, 1, 1, 1)
    maps.xw[:, :, 0, 0] = [[1.0, 0.0], [a, 1.0]]
    tubes = TubeParams(np.array([[[s0]], [[s1]]]), np.zeros((1, 1, 1)), np.zeros(2))
    rows = [(np.array([[1.0, 0.0]]), np.zeros(1))] * 2
    rep = tighten(maps, tubes, rows, np.zeros((2, 1)), np.zeros((1, 1)), tighten_terminal=True)
    assert rep.margins[1][0] == pytest.approx(abs(a) * s0 + s1, abs=1e-15)
    assert vertex_oracle(maps, tubes, [1.0, 0.0], 1) == pytest.approx(abs(a) * s0 + s1, abs=1e-15)


def test_terminal_rows_are_untightened_by_default():
    maps = ResponseMaps.zeros(1, 1, 1, 1)
    maps.xw[:, :, 0, 0] = [[1.0, 0.0], [1.0, 1.0]]
    tubes = TubeParams(np.ones((2, 1, 1)), np.zeros((1, 1, 1)), np.zeros(2))
    rows = [(np.array([[1.0, 0.0]]), np.zeros(1))] * 2
    rep = tighten(maps, tubes, rows, np.zeros((2, 1)), np.zeros((1, 1)))
    assert rep.margins[0][0] == 1.0 and rep.margins[1][0] == 0.0


def test_open_loop_random_walk_radius_grows_by_one_per_step():
    T = 4
    maps = ResponseMaps.zeros(T, 1, 1, 1)
    for k in range(T + 1):
        maps.xw[k, :k + 1] = 1.0                   # A = 1: every past disturbance persists
    tubes = TubeParams(np.ones((T + 1, 1, 1)), np.zeros((T, 1, 1)), np.zeros(T + 1))
    r = tube_radii(maps, tubes)
    np.testing.assert_array_equal(r[:, 0], np.arange(1, T + 2))
    for k in range(T + 1):
        assert vertex_oracle(maps, tubes, [1.0, 0.0], k) == pytest.approx(k + 1, abs=1e-12)


def test_single_channel_oracle_is_absolute_value():
    maps = ResponseMaps.zeros(1, 1, 1, 1)
    maps.xw[0, 0] = 1.0
    # only the initial-condition channel is scaled, the other two are switched off
    tubes = TubeParams(np.array([[[0.4]], [[0.0]]]), np.zeros((1, 1, 1)), np.zeros(2))
    assert vertex_oracle(maps, tubes, [-2.5, 0.0], 0) == pytest.approx(1.0, abs=1e-15)


def test_zero_direction_oracle_is_zero(rng):
    ltv = random_ltv(rng, 2, 2, 1, 1)
    maps = lqg_maps(ltv, rng)
    assert vertex_oracle(maps, random_tubes(rng, 2, 2, 1), np.zeros(3), 2) == 0.0


def test_oracle_refuses_large_instances(rng):
    ltv = random_ltv(rng, 5, 3, 1, 2)
    maps = lqg_maps(ltv, rng)
    with pytest.raises(OracleTooLarge):
        vertex_oracle(maps, random_tubes(rng, 5, 3, 2), np.ones(4), 3)


tiny = st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(1, 2), st.integers(0, 2**31))


@settings(max_examples=25, deadline=None)
@given(tiny)
def test_margins_equal_vertex_enumeration(d):
    T, nx, nu, nr, seed = d
    if (T + 1) * nx + T * nr > 16:
        return
    rng = np.random.default_rng(seed)
    ltv = random_ltv(rng, T, nx, nu, nr)
    maps = lqg_maps(ltv, rng)
    tubes = random_tubes(rng, T, nx, nr)
    rows = random_rows(rng, T, nx, nu, 2)
    z, v = nominal_path(rng, T, nx, nu)
    rep = tighten(maps, tubes, rows, z, v, tighten_terminal=True)
    for k in range(T + 1):
        for i, c in enumerate(rows[k][0]):
            if k == T:
                c = np.concatenate([c[:nx], np.zeros(nu)])
                rep_k = tighten(maps, tubes, [(c[None], np.zeros(1))] * (T + 1), z, v, tighten_terminal=True)
                assert rep_k.margins[k][0] == pytest.approx(vertex_oracle(maps, tubes, c, k), abs=1e-10)
            else:
                assert rep.margins[k][i] == pytest.approx(vertex_oracle(maps, tubes, c, k), abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(tiny, st.floats(0.0, 1.0))
def test_larger_scalings_never_shrink_margins(d, grow):
    T, nx, nu, nr, seed = d
    rng = np.random.default_rng(seed)
    ltv = random_ltv(rng, T, nx, nu, nr)
    maps = lqg_maps(ltv, rng)
    small = random_tubes(rng, T, nx, nr)
    big = TubeParams(small.Sigma + grow * np.stack([np.diag(rng.uniform(0, 1, nx)) for _ in range(T + 1)]),
                     small.Upsilon * (1 + grow), small.tau)
    rows = random_rows(rng, T, nx, nu)
    z, v = nominal_path(rng, T, nx, nu)
    m_small = tighten(maps, small, rows, z, v, tighten_terminal=True).margins
    m_big = tighten(maps, big, rows, z, v, tighten_terminal=True).margins
    for a, b in zip(m_small, m_big):
        assert np.all(b >= a - 1e-12)
    assert np.all(tube_radii(maps, big) >= tube_radii(maps, small) - 1e-12)


def test_random_realizations_stay_inside_tubes(rng):
    for _ in range(5):
        T, nx, nu, nr = 6, 3, 2, 2
        ltv = random_ltv(rng, T, nx, nu, nr)
        maps = lqg_maps(ltv, rng)
        tubes = random_tubes(rng, T, nx, nr)
        r = tube_radii(maps, tubes)
        w = rng.uniform(-1, 1, (1000, T + 1, nx))
        e = rng.uniform(-1, 1, (1000, T, nr))
        dx, du = apply_response(maps, scaled_ltv(ltv, tubes), w, e)
        assert np.all(np.abs(dx) <= r[:, :nx] + 1e-12)
        assert np.all(np.abs(du) <= r[:T, nx:] + 1e-12)


def test_light_dark_solution_has_nonnegative_slack(lightdark_spec, lightdark_full):
    res = lightdark_full
    tubes = build_scalings(lightdark_spec, res.z, res.v)
    rep = tighten(res.maps, tubes, constraint_rows(lightdark_spec, res.z), res.z, res.v)
    assert rep.min_slack >= -1e-8
