import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opsize import closed_form as cf


def taylor_oracle(r, t, n_terms):
    """Coefficients of the generating function in w = e^{-mu}, to 40 digits."""
    with mpmath.workdps(40):
        r, t = mpmath.mpf(r), mpmath.mpf(t)
        e = mpmath.exp((r - 1) * t)

        def z(w):
            return 1 - (r - 1) * (1 - w) / (e * (r - w) - (1 - w))

        return [float(c) for c in mpmath.taylor(z, 0, n_terms - 1)]


@pytest.mark.parametrize("r, t", [(0.0, 0.7), (0.25, 3.0), (0.5, 1.0), (1.5, 2.0), (3.0, 0.4), (0.9, 12.0)])
def test_matches_taylor_oracle(r, t):
    n = np.arange(25)
    got = cf.p_exact(n, cf.EarlyTimeParams(r, t))
    np.testing.assert_allclose(got, taylor_oracle(r, t, 25), rtol=1e-12, atol=1e-300)


def test_hand_values():
    assert cf.p_exact(0, cf.EarlyTimeParams(0.0, 5.0)) == 0.0
    assert cf.p_exact(0, cf.EarlyTimeParams(1.5, 2 * math.log(2))) == pytest.approx(0.75, abs=1e-14)
    n = np.arange(1, 30)
    np.testing.assert_allclose(cf.p_critical(n, 1.0), 2.0 ** -(n + 1), rtol=1e-14)


def test_critical_limit_is_continuous():
    n = np.arange(20)
    for eps in (1e-7, 1e-9):
        near = cf.p_exact(n, cf.EarlyTimeParams(1 + eps, 3.0))
        np.testing.assert_allclose(near, cf.p_critical(n, 3.0), rtol=1e-6)
    np.testing.assert_allclose(cf.p_exact(n, cf.EarlyTimeParams(1.0, 3.0)), cf.p_critical(n, 3.0), rtol=1e-14)


@settings(max_examples=60)
@given(st.floats(0, 4), st.floats(0.01, 30))
def test_normalisation_and_mean(r, t):
    params = cf.EarlyTimeParams(r, t)
    n_cut = 400
    probs = cf.p_exact(np.arange(n_cut + 1), params)
    assert np.all(probs >= 0)
    assert math.fsum(probs) + cf.p_exact_tail(n_cut, params) == pytest.approx(1.0, abs=1e-12)
    if cf.p_exact_tail(n_cut, params) < 1e-15:
        assert math.fsum(np.arange(n_cut + 1) * probs) == pytest.approx(cf.mean_exact(params), rel=1e-9)


def test_large_time_is_finite():
    params = cf.EarlyTimeParams(0.1, 800.0)
    p = cf.p_exact(np.array([0, 1, 10**6]), params)
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(0.1, abs=1e-15)


def test_generating_function_matches_series():
    params = cf.EarlyTimeParams(0.5, 2.0)
    mu = np.array([0.0, 0.1, 1.0, 3.0])
    n = np.arange(2000)
    series = np.array([math.fsum(cf.p_exact(n, params) * np.exp(-m * n)) for m in mu])
    np.testing.assert_allclose(cf.z_exact(mu, params), series, rtol=1e-12)
    with pytest.raises(cf.CriticalPointError):
        cf.z_exact(0.1, cf.EarlyTimeParams(1.0, 1.0))
    np.testing.assert_allclose(cf.z_critical(0.0, 5.0), 1.0)


def test_tail_length():
    params = cf.EarlyTimeParams(2.0, 3.0)
    p = cf.p_exact(np.arange(1, 40), params)
    slope = np.polyfit(np.arange(1, 40), np.log(p), 1)[0]
    assert -1 / slope == pytest.approx(cf.tail_xi(params), rel=1e-10)
    assert cf.tail_xi(cf.EarlyTimeParams(2.0, math.inf)) == pytest.approx(1 / math.log(2))
    with pytest.raises(ValueError):
        cf.tail_xi(cf.EarlyTimeParams(0.5, 1.0))


def test_bad_params():
    with pytest.raises(ValueError):
        cf.EarlyTimeParams(-0.1, 1.0)
    with pytest.raises(ValueError):
        cf.EarlyTimeParams(0.5, -1.0)


# -- late time ---------------------------------------------------------------


@pytest.mark.parametrize("r", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("lam", [0.3, 2.0, 100.0])
def test_regular_weight_and_moment(r, lam):
    sd = cf.ScaledDistribution(r, lam)
    assert cf.reg_weight(sd) == pytest.approx(1 - r, abs=1e-12)
    with mpmath.workdps(30):
        half = mpmath.mpf(1 - r) / 2
        moment = mpmath.quad(lambda s: s * (2 * (1 - r) ** 2 * mpmath.exp(-2 * s / (lam * (1 - r - 2 * s)))
                                            / (lam * (1 - r - 2 * s) ** 2)), [0, half * (1 - 1e-3), half])
    assert cf.reg_moment(sd) == pytest.approx(float(moment), rel=1e-9)
    assert cf.mean_size_late(sd) == pytest.approx(cf.reg_moment(sd), rel=1e-9)


def test_lambda_at_scrambling_time():
    r, N = 0.4, 1000
    t_s = math.log(N) / (1 - r)
    assert cf.lambda_of_t(t_s, r, N) == pytest.approx(2 / (1 - r) ** 2)
    sd = cf.ScaledDistribution.at_time(t_s, r, N)
    assert sd.N == N and sd.singular_weight == r


def test_regular_density_vanishes_at_support_edge():
    sd = cf.ScaledDistribution(0.3, 1.0)
    assert cf.p_reg(sd.support_max, sd) == 0.0
    assert cf.p_reg(-0.1, sd) == 0.0
    with pytest.raises(ValueError):
        cf.ScaledDistribution(1.0, 1.0)
