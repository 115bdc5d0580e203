import math

import numpy as np
import pytest
from scipy.linalg import expm

from opsize import closed_form as cf
from opsize import meanfield as mf
from opsize.model import CouplingTerm, ModelSpec, derive_rates, from_r


def dense_oracle(table, n_max, t):
    """exp(A t) applied to delta_1 for the truncated generator, built independently."""
    A = np.zeros((n_max + 1, n_max + 1))
    for n in range(1, n_max + 1):
        for j in table:
            A[n, n] -= n * j.rate
            if n + j.change <= n_max:
                A[n + j.change, n] += n * j.rate
    p0 = np.zeros(n_max + 1)
    p0[1] = 1
    return expm(A * t) @ p0


def test_jump_table_drops_two_leg_terms():
    spec = ModelSpec(q=6, J=0.1, couplings=(CouplingTerm(1, 1, 0.2), CouplingTerm(2, 2, 5.0), CouplingTerm(3, 1, 0.3)))
    table = mf.jump_table(spec)
    assert {j.change: j.rate for j in table} == pytest.approx({-1: 0.8, 1: 1.2, 4: 0.4})
    rates = derive_rates(spec)
    assert mf.mean_growth_rate(table) == pytest.approx(rates.kappa_eff - rates.gamma)


@pytest.mark.parametrize("r", [0.5, 2.0])
def test_master_matches_dense_expm(r):
    table = mf.jump_table(from_r(r))
    n_max = 60
    dists = mf.evolve_master(np.array([0.0, 1.0]), table, [0.0, 0.5, 1.5], n_max=n_max, leak_bound=1.0)
    np.testing.assert_allclose(dists[-1].probs, dense_oracle(table, n_max, 1.5), atol=1e-12)
    assert dists[0].probs[1] == 1.0


@pytest.mark.parametrize("r", [0.0, 0.5, 1.0, 1.5])
def test_series_and_master_match_closed_form(r):
    table = mf.jump_table(from_r(r))
    t = np.linspace(0, 4, 5)
    master = mf.evolve_master(np.array([0.0, 1.0]), table, t)
    series = mf.evolve_series(None, table, t)
    for tk, m, s in zip(t, master, series):
        exact = cf.p_exact(np.arange(201), cf.EarlyTimeParams(r, tk))
        np.testing.assert_allclose(m.probs[:201], exact[: m.n_max + 1][:201], atol=1e-8)
        np.testing.assert_allclose(s.coeffs[:201], exact[: s.n_max + 1][:201], atol=1e-8)
        assert m.total() == pytest.approx(1.0, abs=1e-9)


def test_q_body_mean_growth():
    spec = ModelSpec(q=6, J=0.125)
    table = mf.jump_table(spec)
    t = np.array([0.0, 1.0, 2.0])
    for d in mf.evolve_series(None, table, t):
        assert mf.moment(d.to_distribution(), 1) == pytest.approx(math.exp(2.0 * d.t), rel=1e-8)


def test_truncation_error_is_loud():
    table = mf.jump_table(from_r(0.0))
    with pytest.raises(mf.TruncationError, match="n_max"):
        mf.evolve_master(np.array([0.0, 1.0]), table, [0.0, 5.0], n_max=20)
    with pytest.raises(mf.TruncationError):
        mf.evolve_series(None, table, [0.0, 5.0], n_max=20)


def test_default_n_max_controls_leak():
    table = mf.jump_table(from_r(0.25))
    n_max = mf.default_n_max(table, 6.0)
    params = cf.EarlyTimeParams(0.25, 6.0)
    assert cf.p_exact_tail(n_max, params) < mf.LEAK_BOUND


def test_truncated_arithmetic():
    a = np.array([0.5, 0.25, 0.25])
    np.testing.assert_allclose(mf.truncated_pow(a, 3, 4), np.convolve(np.convolve(a, a), a)[:5])
    big = np.random.default_rng(1).random(600)
    np.testing.assert_allclose(mf.truncated_mul(big, big, 599), np.convolve(big, big)[:600], rtol=1e-10)
    assert mf.truncated_pow(a, 0, 3).tolist() == [1, 0, 0, 0]


def test_series_evaluation_and_initial_state():
    z = mf.GenFunSeries.initial(10, n0=3)
    assert z(0.0) == 1.0 and z(1.0) == pytest.approx(math.exp(-3))
    with pytest.raises(ValueError):
        mf.GenFunSeries.initial(2, n0=3)


def test_invalid_inputs():
    table = mf.jump_table(from_r(0.5))
    with pytest.raises(ValueError):
        mf.evolve_master(np.array([0.5, 0.2]), table, [0.0, 1.0])
    with pytest.raises(ValueError):
        mf.evolve_master(np.array([0.0, 1.0]), table, [1.0, 0.5])
    with pytest.raises(ValueError):
        mf.moment(mf.SizeDistribution(0.0, np.ones(2) / 2), -1)


def test_no_dynamics_is_constant():
    dists = mf.evolve_master(np.array([0.0, 1.0]), (), [0.0, 3.0], n_max=5)
    assert dists[-1].probs[1] == 1.0
