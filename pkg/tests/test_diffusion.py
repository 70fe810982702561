import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq
from scipy.stats import norm

from rwmscale import diffusion
from rwmscale.target import LOGISTIC, NORMAL

# Oracle: root of the stationarity condition 4 Phi(-u/2) = u phi(u/2), frozen from scipy brentq.
U_HAT = 2.3812025
AOAR = 0.2338102
V_STAR = 1.3257329


def test_oracle_constants_frozen():
    root = brentq(lambda u: 4 * norm.cdf(-u / 2) - u * norm.pdf(u / 2), 1, 4, xtol=1e-14)
    assert root == pytest.approx(U_HAT, abs=1e-7)
    assert 2 * norm.cdf(-root / 2) == pytest.approx(AOAR, abs=1e-7)


def test_speed_and_acceptance_at_zero():
    assert diffusion.speed(0.0) == 0.0
    assert diffusion.limiting_acceptance(0.0) == 1.0


def test_values_at_reference_ell():
    assert diffusion.limiting_acceptance(2.38) == pytest.approx(0.2340, abs=5e-5)
    assert diffusion.speed(2.38) == pytest.approx(1.326, abs=5e-4)


@given(st.floats(0.0, 20.0), st.floats(0.01, 100.0))
def test_speed_scaling_law(ell, e_r):
    lhs = diffusion.speed(ell, e_r)
    rhs = diffusion.speed(ell * math.sqrt(e_r), 1.0) / e_r
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


def test_maximize_speed_unit():
    ell, v = diffusion.maximize_speed(1.0)
    assert 2.37 <= ell <= 2.39
    assert ell == pytest.approx(U_HAT, abs=1e-6)
    assert v == pytest.approx(V_STAR, abs=1e-6)
    # first-order optimality
    assert abs(4 * norm.cdf(-ell / 2) - ell * norm.pdf(ell / 2)) < 1e-8
    assert 0.233 <= 2 * diffusion.norm_cdf(-ell / 2) <= 0.235


def test_maximize_speed_scaling():
    assert diffusion.maximize_speed(100.0)[0] == pytest.approx(diffusion.maximize_speed(1.0)[0] / 10, rel=1e-6)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf])
def test_maximize_speed_rejects(bad):
    with pytest.raises(ValueError):
        diffusion.maximize_speed(bad)


def test_perturbed_cdf_is_detected(monkeypatch):
    monkeypatch.setattr(diffusion, "norm_cdf", lambda x: norm.cdf(1.1 * x))
    with pytest.raises(ArithmeticError):
        diffusion.maximize_speed(1.0)


def test_golden_section_on_parabola():
    assert diffusion.golden_section_max(lambda x: -(x - 1.3) ** 2, 0, 5, 1e-10) == pytest.approx(1.3, abs=1e-8)


def test_em_zero_speed_is_constant():
    path = diffusion.euler_maruyama(diffusion.DiffusionParams(0.0, NORMAL), 0.7, 100, np.random.default_rng(0))
    assert np.all(path == 0.7)


def test_em_step_limit():
    params = diffusion.DiffusionParams(20.0, NORMAL, dt=0.01)
    with pytest.raises(ValueError):
        diffusion.euler_maruyama(params, 0.0, 10, np.random.default_rng(0))


def test_em_ou_stationary_moments():
    n = 10**6
    path = diffusion.euler_maruyama(diffusion.DiffusionParams(1.0, NORMAL, 0.01), 0.0, n,
                                    np.random.default_rng(11))
    # OU integrated autocorrelation times: 4/v for z, 2/v for z^2
    horizon = n * 0.01
    se_mean = math.sqrt(4.0 / horizon)
    se_var = math.sqrt(2.0 * 2.0 / horizon)
    assert abs(path.mean()) < 4 * se_mean
    assert abs(path.var() - 1.0) < 4 * se_var


def test_em_ou_autocorrelation():
    v, dt = 1.3, 0.01
    rng = np.random.default_rng(5)
    path = diffusion.euler_maruyama(diffusion.DiffusionParams(v, NORMAL, dt), rng.standard_normal(64), 50_000, rng)
    taus = np.array([0.1, 0.5, 1.0, 1.5])
    acf = diffusion.autocorrelation(path, np.rint(taus / dt).astype(int))
    assert np.all(taus * v <= 2)
    assert np.max(np.abs(acf - diffusion.ou_autocorrelation(taus, v))) < 0.02


def test_em_python_fallback_matches_kernel():
    from dataclasses import replace

    rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
    params = diffusion.DiffusionParams(1.0, LOGISTIC, 0.01)
    a = diffusion.euler_maruyama(params, np.zeros(3), 500, rng_a)
    b = diffusion.euler_maruyama(replace(params, family=replace(LOGISTIC, kernel_code=None)), np.zeros(3), 500, rng_b)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
