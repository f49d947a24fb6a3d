import numpy as np
import pytest

from sls_synth import scp
from sls_synth.environments import builtin_spec_dict, monte_carlo, rollout, sample_disturbance


def test_same_seed_same_disturbance():
    a = sample_disturbance("uniform", 3, 2, 10, seed=42)
    b = sample_disturbance("uniform", 3, 2, 10, seed=42)
    c = sample_disturbance("uniform", 3, 2, 10, seed=43)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[0], c[0])


def test_extreme_entries_are_signs():
    w, e = sample_disturbance("extreme", 4, 3, 25, seed=1)
    assert w.shape == (26, 4) and e.shape == (25, 3)
    assert np.all(np.abs(w) == 1.0) and np.all(np.abs(e) == 1.0)
    assert (w > 0).any() and (w < 0).any()


def test_uniform_entries_average_out():
    w, e = sample_disturbance("uniform", 2, 2, 10_000, seed=3)
    assert np.all(np.abs(w) <= 1.0) and np.all(np.abs(e) <= 1.0)
    assert np.all(np.abs(w.mean(axis=0)) < 0.02) and np.all(np.abs(e.mean(axis=0)) < 0.02)


def test_unknown_mode_is_rejected():
    with pytest.raises(ValueError):
        sample_disturbance("gaussian", 2, 2, 3, seed=0)


def test_zero_disturbance_replays_the_nominal(lightdark_full):
    s = lightdark_full.spec
    r = rollout(lightdark_full, np.zeros((s.T + 1, s.nx)), np.zeros((s.T, s.nr)))
    np.testing.assert_allclose(r.x, lightdark_full.z, atol=1e-10)
    np.testing.assert_allclose(r.u, lightdark_full.v, atol=1e-10)
    assert r.success and r.fully_contained and r.excursion <= 1e-10


def test_feedback_keeps_excursions_smaller_than_open_loop(lightdark_full):
    s = lightdark_full.spec
    closed_err, open_err, open_escapes = [], [], 0
    for seed in range(30):
        w, e = sample_disturbance("uniform", s.nx, s.nr, s.T, seed=seed)
        closed = rollout(lightdark_full, w, e)
        opened = rollout(lightdark_full, w, e, feedback=False)
        assert closed.fully_contained
        open_escapes += not opened.fully_contained
        closed_err.append(np.abs(closed.x[-1] - lightdark_full.z[-1]).max())
        open_err.append(np.abs(opened.x[-1] - lightdark_full.z[-1]).max())
    assert np.mean(open_err) > np.mean(closed_err)
    assert open_escapes > 0


def test_light_dark_monte_carlo(lightdark_full):
    rep = monte_carlo(lightdark_full, n=50, seed=7)
    assert rep.success_rate == 1.0 and rep.violation_rate == 0.0 and rep.containment_rate == 1.0
    assert rep.max_excursion <= 1.0


def test_monte_carlo_is_reproducible_across_thread_counts(lightdark_full):
    a = monte_carlo(lightdark_full, n=12, seed=5, threads=1)
    b = monte_carlo(lightdark_full, n=12, seed=5, threads=4)
    assert a.to_json() == b.to_json()
    for ra, rb in zip(a.rollouts, b.rollouts):
        np.testing.assert_array_equal(ra.x, rb.x)


def test_monte_carlo_needs_a_rollout(lightdark_full):
    with pytest.raises(ValueError):
        monte_carlo(lightdark_full, n=0)


def test_negligible_noise_always_succeeds():
    d = builtin_spec_dict("lightdark")
    d["noise"] = {"Xi": {"diag": [1e-9, 1e-9]}, "E": {"diag": [1e-9, 1e-9]}, "sigma": {"id": "zero"}}
    d["observation"]["envelope"] = {"id": "constant", "params": {"value": 1e-9}}
    res = scp.synthesize(d)
    rep = monte_carlo(res, n=20, seed=0)
    assert rep.success_rate == 1.0 and rep.violation_rate == 0.0
