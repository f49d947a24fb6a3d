import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_ltv, random_pd
from sls_synth.errors import KalmanSingular, OracleTooLarge, RiccatiSingular
from sls_synth.oracle import count_unknowns, dense_kkt_oracle
from sls_synth.riccati import (assemble, backward_control, backward_kalman, forward_passes, lqg_cost,
                               solve_lqg)
from sls_synth.sls import ResponseMaps, StackedLtv, blocks_to_dense, check_identities, simulate_closed_loop_ltv


def scalar_ltv(T=1, A=1.0, B=1.0, C=1.0, E=1.0, F=1.0, Xi=1.0):
    full = lambda v: np.full((T, 1, 1), float(v))
    return StackedLtv(full(A), full(B), full(C), full(E), full(F), np.array([[float(Xi)]]))


def test_scalar_riccati_step_by_hand():
    ctrl = backward_control(scalar_ltv(), np.eye(1), np.eye(1), np.eye(1))
    assert ctrl.K[0, 0, 0] == pytest.approx(-0.5, abs=1e-15)
    assert ctrl.S[0, 0, 0] == pytest.approx(1.5, abs=1e-15)
    assert ctrl.S[1, 0, 0] == 1.0


def test_scalar_kalman_step_by_hand():
    kal = backward_kalman(scalar_ltv(E=0.0))
    assert kal.L[1, 0, 0] == pytest.approx(-0.5, abs=1e-15)
    assert kal.Pi[1, 0, 0] == pytest.approx(0.5, abs=1e-15)
    assert kal.Pi[0, 0, 0] == 1.0


def test_scalar_hand_values_are_the_oracle_optimum():
    ltv = scalar_ltv(E=0.0)
    Q = R = P = np.eye(1)
    ric = lqg_cost(solve_lqg(ltv, Q, R, P).maps, ltv, Q, R, P)
    assert ric == pytest.approx(dense_kkt_oracle(ltv, Q, R, P).cost, rel=1e-10)


def test_no_actuation_means_no_gain(rng):
    ltv = random_ltv(rng, 4, 3, 2, 2)
    ltv = StackedLtv(ltv.A, np.zeros_like(ltv.B), ltv.C, ltv.E, ltv.F, ltv.Xi)
    Q, P = random_pd(rng, 3), random_pd(rng, 3)
    ctrl = backward_control(ltv, Q, np.eye(2), P)
    assert not ctrl.K.any()
    for k in range(4):
        np.testing.assert_allclose(ctrl.S[k], Q + ltv.A[k].T @ ctrl.S[k + 1] @ ltv.A[k], rtol=1e-13)


def test_zero_cost_means_no_gain(rng):
    ltv = random_ltv(rng, 4, 3, 2, 2)
    ctrl = backward_control(ltv, np.zeros((3, 3)), np.eye(2), np.zeros((3, 3)))
    assert not ctrl.K.any() and not ctrl.S.any()


def test_unobserved_covariance_grows_open_loop(rng):
    ltv = random_ltv(rng, 4, 3, 2, 2)
    ltv = StackedLtv(ltv.A, ltv.B, np.zeros_like(ltv.C), ltv.E, ltv.F, ltv.Xi)
    kal = backward_kalman(ltv)
    assert not kal.L.any()
    for j in range(4):
        np.testing.assert_allclose(kal.Pi[j + 1], ltv.E[j] @ ltv.E[j].T + ltv.A[j] @ kal.Pi[j] @ ltv.A[j].T,
                                   rtol=1e-13)


def test_no_uncertainty_gives_zero_covariance(rng):
    ltv = random_ltv(rng, 4, 3, 2, 2)
    ltv = StackedLtv(ltv.A, ltv.B, ltv.C, np.zeros_like(ltv.E), ltv.F, np.zeros((3, 3)))
    kal = backward_kalman(ltv)
    assert not kal.Pi.any() and not kal.L.any()


def test_singular_input_weight_raises(rng):
    ltv = random_ltv(rng, 3, 2, 2, 1)
    ltv = StackedLtv(ltv.A, np.zeros_like(ltv.B), ltv.C, ltv.E, ltv.F, ltv.Xi)
    with pytest.raises(RiccatiSingular):
        backward_control(ltv, np.eye(2), np.zeros((2, 2)), np.eye(2))


def test_zero_measurement_scaling_raises(rng):
    ltv = random_ltv(rng, 3, 2, 2, 1)
    ltv = StackedLtv(ltv.A, ltv.B, np.zeros_like(ltv.C), ltv.E, np.zeros_like(ltv.F), ltv.Xi)
    with pytest.raises(KalmanSingular):
        backward_kalman(ltv)


def test_zero_gains_give_transition_products(rng):
    ltv = random_ltv(rng, 4, 3, 2, 2)
    ctrl = backward_control(ltv, np.zeros((3, 3)), np.eye(2), np.zeros((3, 3)))
    kal = backward_kalman(StackedLtv(ltv.A, ltv.B, np.zeros_like(ltv.C), ltv.E, ltv.F, ltv.Xi))
    ops = forward_passes(ltv, ctrl, kal)
    assert not ops.ubar.any() and not ops.yhat.any()
    for j in range(5):
        Phi = np.eye(3)
        for k in range(j, 5):
            np.testing.assert_allclose(ops.xbar[k, j], Phi, atol=1e-14)
            np.testing.assert_allclose(ops.xhat[k, j], Phi, atol=1e-14)
            if k < 4:
                Phi = ltv.A[k] @ Phi


def test_propagation_operators_satisfy_their_identities(rng):
    ltv = random_ltv(rng, 4, 3, 2, 2)
    sol = solve_lqg(ltv, random_pd(rng, 3), random_pd(rng, 2), random_pd(rng, 3))
    M, ZB, ZC = ltv.M_dense(), ltv.ZB_dense(), ltv.ZC_dense()
    Xb, Ub = blocks_to_dense(sol.ops.xbar), blocks_to_dense(sol.ops.ubar)
    Xh, Yh = blocks_to_dense(sol.ops.xhat), blocks_to_dense(sol.ops.yhat)
    I = np.eye(M.shape[0])
    assert np.abs(M @ Xb - ZB @ Ub - I).max() <= 1e-8
    assert np.abs(Xh @ M - Yh @ ZC - I).max() <= 1e-8


def test_perfect_state_limit_collapses_to_state_feedback(rng):
    ltv = random_ltv(rng, 3, 2, 2, 2)
    ctrl = backward_control(ltv, random_pd(rng, 2), random_pd(rng, 2), random_pd(rng, 2))
    ops = forward_passes(ltv, ctrl, backward_kalman(ltv))
    # an exact estimator leaves no estimation-error response
    ops.xhat = np.zeros_like(ops.xhat)
    ops.yhat = np.zeros_like(ops.yhat)
    maps = assemble(ltv, ops)
    np.testing.assert_allclose(maps.xw, ops.xbar, atol=1e-12)
    np.testing.assert_allclose(maps.uw, ops.ubar, atol=1e-12)
    assert not maps.xe.any() and not maps.ue.any()


def test_lqg_cost_zero_weights_is_zero(rng):
    ltv = random_ltv(rng, 3, 2, 2, 2)
    maps = solve_lqg(ltv, np.eye(2), np.eye(2), np.eye(2)).maps
    assert lqg_cost(maps, ltv, np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))) == 0.0


def test_lqg_cost_open_loop_scalar_by_hand():
    ltv = scalar_ltv()
    maps = ResponseMaps.zeros(1, 1, 1, 1)
    maps.xw[:, :, 0, 0] = [[1, 0], [1, 1]]
    one = np.eye(1)
    # every entry of [[1, 0], [1, 1]] weighted by one: 3; without the terminal weight only row 0 counts
    assert lqg_cost(maps, ltv, one, one, one) == pytest.approx(3.0)
    assert lqg_cost(maps, ltv, one, one, 0 * one) == pytest.approx(1.0)


def realized_maps(ltv, gains):
    """Maps of the closed loop under arbitrary gains, from unit impulses."""
    T, nx, nu, nr = ltv.T, ltv.nx, ltv.nu, ltv.nr
    unit = StackedLtv(ltv.A, ltv.B, ltv.C, np.repeat(np.eye(nx)[None], T, 0), np.repeat(np.eye(nr)[None], T, 0),
                      np.eye(nx))
    nw, ne = (T + 1) * nx, T * nr
    eye = np.eye(nw + ne)
    w = eye[:, :nw].reshape(-1, T + 1, nx)
    e = eye[:, nw:].reshape(-1, T, nr)
    dx, du = simulate_closed_loop_ltv(unit, gains, w, e)
    dx = dx.reshape(nw + ne, -1).T
    du = du.reshape(nw + ne, -1).T
    return ResponseMaps.from_dense(dx[:, :nw], dx[:, nw:], du[:, :nw], du[:, nw:], nx, nu, nr)


def test_optimal_maps_beat_perturbed_gains(rng):
    from sls_synth.sls import GainSchedule, recover_gains

    ltv = random_ltv(rng, 4, 2, 2, 2)
    Q, R, P = random_pd(rng, 2), random_pd(rng, 2), random_pd(rng, 2)
    sol = solve_lqg(ltv, Q, R, P)
    best = lqg_cost(sol.maps, ltv, Q, R, P)
    gains = recover_gains(sol.maps, ltv)
    again = realized_maps(ltv, gains)
    assert lqg_cost(again, ltv, Q, R, P) == pytest.approx(best, rel=1e-10)
    mask = np.tril(np.ones((4, 4)), -1)[:, :, None, None]
    for _ in range(50):
        # direct access to dx_0 through K0 would leave the output-feedback class
        g = GainSchedule(gains.K0, gains.K + 0.1 * rng.normal(size=gains.K.shape) * mask)
        maps = realized_maps(ltv, g)
        assert check_identities(maps, ltv).worst <= 1e-8
        assert lqg_cost(maps, ltv, Q, R, P) >= best * (1 - 1e-12)


def test_oracle_with_zero_scalings_costs_nothing(rng):
    ltv = random_ltv(rng, 3, 2, 1, 1)
    ltv = StackedLtv(ltv.A, ltv.B, ltv.C, np.zeros_like(ltv.E), np.zeros_like(ltv.F), np.zeros((2, 2)))
    res = dense_kkt_oracle(ltv, np.eye(2), np.eye(1), np.eye(2))
    assert np.isfinite(res.cost) and abs(res.cost) <= 1e-12
    assert check_identities(res.maps, ltv).worst <= 1e-8
    with pytest.raises(KalmanSingular):      # the structured path needs F F' + C Pi C' invertible
        solve_lqg(ltv, np.eye(2), np.eye(1), np.eye(2))


def test_oracle_guard():
    ltv = random_ltv(np.random.default_rng(0), 12, 3, 2, 2)
    assert count_unknowns(12, 3, 2, 2) > 2000
    with pytest.raises(OracleTooLarge):
        dense_kkt_oracle(ltv, np.eye(3), np.eye(2), np.eye(3))


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.integers(1, 8), st.integers(1, 4), st.integers(1, 2), st.integers(1, 3), st.integers(0, 2**31),
                 st.sampled_from([0.5, 1.0, 1.5])))
def test_structured_solver_matches_dense_oracle(d):
    T, nx, nu, nr, seed, scale = d
    rng = np.random.default_rng(seed)
    ltv = random_ltv(rng, T, nx, nu, nr, scale)
    Q, R, P = random_pd(rng, nx), random_pd(rng, nu), random_pd(rng, nx)
    maps = solve_lqg(ltv, Q, R, P).maps
    ric = lqg_cost(maps, ltv, Q, R, P)
    ora = dense_kkt_oracle(ltv, Q, R, P)
    assert abs(ric - ora.cost) / ora.cost <= 1e-6
    assert check_identities(maps, ltv).worst <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.integers(1, 8), st.integers(1, 4), st.integers(1, 2), st.integers(1, 3), st.integers(0, 2**31)))
def test_control_and_estimation_separate(d):
    T, nx, nu, nr, seed = d
    rng = np.random.default_rng(seed)
    ltv = random_ltv(rng, T, nx, nu, nr)
    Q, R, P = random_pd(rng, nx), random_pd(rng, nu), random_pd(rng, nx)
    other = random_ltv(rng, T, nx, nu, nr)
    noisy = StackedLtv(ltv.A, ltv.B, other.C, ltv.E, other.F, other.Xi)
    c1, c2 = backward_control(ltv, Q, R, P), backward_control(noisy, Q, R, P)
    assert np.array_equal(c1.K, c2.K) and np.array_equal(c1.S, c2.S)
    s1 = solve_lqg(ltv, Q, R, P)
    s2 = solve_lqg(ltv, random_pd(rng, nx), random_pd(rng, nu), random_pd(rng, nx))
    assert np.array_equal(s1.kalman.Pi, s2.kalman.Pi) and np.array_equal(s1.kalman.L, s2.kalman.L)
