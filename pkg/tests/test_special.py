import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from opsize.special import expint_gamma0, expint_gamma0_scaled


def oracle(x):
    # high-precision convergent series E1(x) = -gamma - ln x - sum (-x)^k / (k k!)
    with mpmath.workdps(60):
        x = mpmath.mpf(x)
        total = mpmath.mpf(0)
        term = mpmath.mpf(1)
        k = 1
        while True:
            term *= -x / k
            inc = term / k
            total += inc
            if abs(inc) < mpmath.mpf(10) ** -55 * max(1, abs(total)):
                break
            k += 1
        return -mpmath.euler - mpmath.log(x) - total


def test_value_at_one():
    assert abs(expint_gamma0(1.0) - 0.219383934395520) <= 1e-12
    assert expint_gamma0(1.0) == pytest.approx(float(oracle(1.0)), rel=1e-15)


def test_relative_accuracy_log_grid():
    xs = np.geomspace(1e-6, 50, 400)
    err = max(abs(expint_gamma0(x) / float(oracle(x)) - 1) for x in xs)
    assert err <= 1e-12


def test_series_oracle_agrees_with_mpmath_builtin():
    for x in (1e-3, 0.7, 3.0, 20.0):
        assert float(oracle(x)) == pytest.approx(float(mpmath.e1(x)), rel=1e-30)


@given(st.floats(1e-6, 700))
def test_scaled_form(x):
    s = expint_gamma0_scaled(x)
    assert s == pytest.approx(math.exp(x) * expint_gamma0(x), rel=1e-12)
    # 1/(x+1) < e^x E1(x) <= 1/x
    assert 1 / (x + 1) < s <= 1 / x


def test_underflow_and_domain():
    assert expint_gamma0(800.0) == 0.0
    assert expint_gamma0_scaled(800.0) == pytest.approx(1 / 801, rel=2e-3)
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            expint_gamma0(bad)
