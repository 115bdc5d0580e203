"""Exponential integral ``Gamma(0, x) = E_1(x)`` for real ``x > 0``."""
from __future__ import annotations

import math

__all__ = ["expint_gamma0", "expint_gamma0_scaled"]

_EULER_GAMMA = 0.57721566490153286061
_EPS = 1e-16
_MAX_ITER = 10_000


def _series(x: float) -> float:
    # E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    total = 0.0
    term = 1.0
    for k in range(1, _MAX_ITER):
        term *= -x / k
        contrib = term / k
        total += contrib
        if abs(contrib) < _EPS * abs(total):
            break
    return -_EULER_GAMMA - math.log(x) - total


def _continued_fraction_scaled(x: float) -> float:
    """``e^x E1(x)`` by modified Lentz on the Legendre continued fraction."""
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"continued fraction for E1({x}) did not converge")


def _check(x: float) -> float:
    x = float(x)
    if not x > 0 or math.isnan(x):
        raise ValueError(f"Gamma(0, x) needs x > 0, got {x}")
    return x


def expint_gamma0(x: float) -> float:
    """Upper incomplete gamma ``Gamma(0, x)``; series for x <= 1, continued fraction above."""
    x = _check(x)
    if x <= 1.0:
        return _series(x)
    if x > 745.0:
        return 0.0
    return math.exp(-x) * _continued_fraction_scaled(x)


def expint_gamma0_scaled(x: float) -> float:
    """``e^x Gamma(0, x)``, finite for large ``x`` where ``e^x`` alone overflows."""
    x = _check(x)
    if x <= 1.0:
        return math.exp(x) * _series(x)
    return _continued_fraction_scaled(x)
