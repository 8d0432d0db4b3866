import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physichm import gradcheck, phm

F64 = np.float64


def naive_readout(x, p):
    """Step-by-step recurrence written out from scratch, then the C/W_out readout."""
    u = x @ p["W_in"]
    d, n = p["A_log"].shape
    h = np.zeros((d, n))
    for t in range(len(x)):
        dt = np.log1p(np.exp(u[t] @ p["W_dt"] + p["b_dt"]))
        b = u[t] @ p["W_B"]
        for i in range(d):
            for j in range(n):
                h[i, j] = np.exp(-dt[i] * np.exp(p["A_log"][i, j])) * h[i, j] + dt[i] * b[j] * u[t, i]
    c = u[-1] @ p["W_C"]
    return (h @ c) @ p["W_out"]


def ssm(seed, c=3, d=5, n=4, dt_range=(1e-3, 1e-1)):
    return phm.init_ssm(np.random.default_rng(seed), c, d, n, dt_range=dt_range, dtype=F64)


def test_zero_input_gives_zero_state():
    p = ssm(0)
    np.testing.assert_array_equal(phm.ssm_encode(np.zeros((10, 3)), p).value, 0.0)


def test_single_step_closed_form(rng):
    p = ssm(1)
    x = rng.standard_normal((1, 3))
    u = x[0] @ p["W_in"]
    dt = np.log1p(np.exp(u @ p["W_dt"] + p["b_dt"]))
    expected = (dt * u)[:, None] * (u @ p["W_B"])[None, :]
    np.testing.assert_allclose(phm.ssm_states(x, p)[0], expected, rtol=1e-14)


@pytest.mark.parametrize("T", [1, 2, 8, 17, 64])
def test_scan_matches_naive_recurrence(T):
    for seed in range(3):
        p = ssm(seed, dt_range=(1e-2, 0.5))
        x = np.random.default_rng([seed, T]).standard_normal((T, 3))
        assert np.abs(phm.ssm_encode(x, p).value - naive_readout(x, p)).max() < 1e-9


def test_decay_in_unit_interval():
    p = ssm(2)
    a = -np.exp(p["A_log"])
    for dt in (1e-6, 1e-2, 1.0, 50.0):
        decay = np.exp(dt * a)
        assert np.all((decay > 0) & (decay < 1))


def test_bounded_state_over_many_trials():
    rng = np.random.default_rng(0)
    trials, T, n = 10_000, 64, 4
    a = -np.exp(rng.uniform(-3, 3, (trials, n)))
    h = np.zeros((trials, n))
    for _ in range(T):
        dt = rng.uniform(1e-4, 5.0, (trials, 1))
        x = rng.uniform(-10, 10, (trials, 1))
        b = rng.uniform(-1, 1, (trials, n))
        h = np.exp(dt * a) * h + dt * b * x
        assert np.abs(h).max() < 1e6


def test_project_affine(rng):
    head = phm.init_head(rng, 6, 4, dtype=F64)
    g, b = phm.project_affine(np.zeros(6), head)
    np.testing.assert_array_equal(g.value, 0.0)
    np.testing.assert_array_equal(b.value, 0.0)
    h = rng.standard_normal(6)
    g, b = phm.project_affine(h, head)
    np.testing.assert_allclose(g.value, h @ head["W_gamma"] + head["b_gamma"], atol=1e-6)
    np.testing.assert_allclose(b.value, h @ head["W_beta"] + head["b_beta"], atol=1e-6)
    head["W_gamma"][:] = 0.0
    assert np.all(phm.project_affine(rng.standard_normal(6), head)[0].value == 0.0)


def test_film_cases(rng):
    f = rng.standard_normal((5, 3))
    np.testing.assert_array_equal(phm.film_modulate(f, np.zeros(3), np.zeros(3)).value, f)
    np.testing.assert_array_equal(phm.film_modulate([[2.0]], [0.5], [1.0]).value, [[4.0]])
    beta = rng.standard_normal(3)
    np.testing.assert_array_equal(phm.film_modulate(f, -np.ones(3), beta).value, np.broadcast_to(beta, f.shape))
    with pytest.raises(ValueError):
        phm.film_modulate(f, np.zeros(2), np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_film_is_affine(a, b, seed):
    r = np.random.default_rng(seed)
    f1, f2 = r.standard_normal((4, 3)), r.standard_normal((4, 3))
    gamma, beta = r.standard_normal(3), r.standard_normal(3)
    film = lambda f: phm.film_modulate(f, gamma, beta).value
    np.testing.assert_allclose(film(a * f1 + b * f2), a * film(f1) + b * film(f2) - (a + b - 1) * beta,
                               atol=1e-10)


def test_sensor_to_film_path_grad_check():
    assert gradcheck.run("ssm", seeds=range(3))["ssm"] < 1e-4
    assert gradcheck.run("film", seeds=range(3))["film"] < 1e-4
