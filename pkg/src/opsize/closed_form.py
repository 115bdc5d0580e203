"""Exact early-time and late-time size distributions of the ``(U_1, U_3)`` model.

Early-time quantities use the dimensionless ratio ``r = gamma / kappa_eff``
and time in units where ``kappa_eff = 1``.  Writing ``a = 1 - r`` and
``phi = expm1(a t) / a`` (which tends to ``t`` as ``r -> 1``), the
distribution takes the cancellation-free form

    P(0, t)   = r phi / (1 + phi)
    P(n>=1,t) = e^{a t} / (1 + phi)^2 * (phi / (1 + phi))^(n-1)

so the critical point is reached continuously and large ``n t`` is handled
in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .special import expint_gamma0_scaled

__all__ = [
    "EarlyTimeParams",
    "ScaledDistribution",
    "CriticalPointError",
    "z_exact",
    "p_exact",
    "p_exact_tail",
    "mean_exact",
    "tail_xi",
    "z_critical",
    "p_critical",
    "p_reg",
    "reg_weight",
    "reg_moment",
    "mean_size_late",
    "lambda_of_t",
]

NEAR_CRITICAL = 1e-6


class CriticalPointError(ValueError):
    pass


@dataclass(frozen=True)
class EarlyTimeParams:
    r: float
    t: float

    def __post_init__(self):
        if not self.r >= 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        if not self.t >= 0:
            raise ValueError(f"t must be >= 0, got {self.t}")

    @property
    def is_critical(self) -> bool:
        return self.r == 1.0


def _phi(a: float, t: float) -> float:
    """``expm1(a t) / a``; third-order expansion for ``|a| < 1e-6``."""
    x = a * t
    if abs(a) < NEAR_CRITICAL:
        return t * (1.0 + x / 2.0 + x * x / 6.0 + x ** 3 / 24.0)
    return math.expm1(x) / a


def _log_parts(r: float, t: float) -> tuple[float, float, float]:
    """Return ``(log e^{at}/(1+phi)^2, log(phi/(1+phi)), phi/(1+phi))``."""
    a = 1.0 - r
    x = a * t
    if a > 0 and x > 30.0:
        # phi ~ e^{x}/a overflows; 1 + phi = (e^x - r)/a
        log1p_phi = x + math.log1p(-r * math.exp(-x)) - math.log(a)
        log_ratio = -math.log1p(a / math.expm1(x)) if x < 700 else 0.0
        ratio = math.exp(log_ratio)
    else:
        phi = _phi(a, t)
        log1p_phi = math.log1p(phi)
        ratio = phi / (1.0 + phi)
        log_ratio = math.log(ratio) if ratio > 0 else -math.inf
    return x - 2.0 * log1p_phi, log_ratio, ratio


def z_exact(mu, params: EarlyTimeParams):
    """Generating function ``sum_n e^{-mu n} P(n, t)`` for ``r != 1``."""
    r, t = params.r, params.t
    if params.is_critical:
        raise CriticalPointError("r = 1: use z_critical")
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("mu must be >= 0")
    w = np.exp(-mu)
    one_minus_w = -np.expm1(-mu)
    denom = np.exp((r - 1.0) * t) * (r - w) - one_minus_w
    if np.any(np.abs(denom) < 1e-300):
        raise ArithmeticError("vanishing denominator in z_exact")
    out = 1.0 - (r - 1.0) * one_minus_w / denom
    return out[()] if out.ndim == 0 else out


def p_exact(n, params: EarlyTimeParams):
    """``P(n, t)``; vectorised over integer ``n >= 0``.  Valid for every ``r >= 0``."""
    r, t = params.r, params.t
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("n must be >= 0")
    if t == 0:
        out = np.where(n == 1, 1.0, 0.0)
        return out[()] if out.ndim == 0 else out
    log_head, log_ratio, ratio = _log_parts(r, t)
    with np.errstate(invalid="ignore"):
        out = np.exp(log_head + (n - 1) * log_ratio)
    out = np.where(n == 0, r * ratio, out)
    return out[()] if out.ndim == 0 else out


def p_exact_tail(n_cut: int, params: EarlyTimeParams) -> float:
    """``sum_{n > n_cut} P(n, t)`` from the exact geometric remainder."""
    if n_cut < 0:
        return 1.0
    _, log_ratio, ratio = _log_parts(params.r, params.t)
    one_minus_p0 = 1.0 - params.r * ratio
    if params.t == 0:
        return 1.0 if n_cut < 1 else 0.0
    return float(one_minus_p0 * math.exp(n_cut * log_ratio))


def mean_exact(params: EarlyTimeParams) -> float:
    return math.exp((1.0 - params.r) * params.t)


def tail_xi(params: EarlyTimeParams) -> float:
    """Decay length of the geometric tail ``P(n) ~ e^{-n/xi}`` in the dissipative phase."""
    r, t = params.r, params.t
    if r <= 1:
        raise ValueError(f"tail length is defined for r > 1, got r = {r}")
    if t <= 0:
        raise ValueError("tail length needs t > 0")
    if math.isinf(t):
        return 1.0 / math.log(r)
    e = math.exp((1.0 - r) * t)
    # (r - e) / (1 - e) with 1 - e = -expm1((1-r)t)
    return 1.0 / math.log((r - e) / -math.expm1((1.0 - r) * t))


def z_critical(mu, t: float):
    mu = np.asarray(mu, dtype=float)
    one_minus_w = -np.expm1(-mu)
    out = 1.0 - one_minus_w / (1.0 + t * one_minus_w)
    return out[()] if out.ndim == 0 else out


def p_critical(n, t: float):
    """Distribution at ``r = 1``; each fixed ``n >= 1`` decays as ``t^-2``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    n = np.asarray(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_t = math.log(t) if t > 0 else -math.inf
        bulk = np.exp((n - 1) * log_t - (n + 1) * math.log1p(t))
    if t == 0:
        bulk = np.where(n == 1, 1.0, 0.0)
    out = np.where(n == 0, t / (1.0 + t), bulk)
    return out[()] if out.ndim == 0 else out


# -- late time ---------------------------------------------------------------


@dataclass(frozen=True)
class ScaledDistribution:
    """Late-time ``P(s) = r delta(s) + P_reg(s)`` with ``s = n / N``."""

    r: float
    lam: float
    N: int = 1

    def __post_init__(self):
        if not 0 <= self.r < 1:
            raise ValueError(f"late-time distribution needs 0 <= r < 1, got {self.r}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")

    @property
    def singular_weight(self) -> float:
        return self.r

    @property
    def support_max(self) -> float:
        return (1.0 - self.r) / 2.0

    @classmethod
    def at_time(cls, t: float, r: float, N: int) -> "ScaledDistribution":
        return cls(r=r, lam=lambda_of_t(t, r, N), N=N)


def p_reg(s, sd: ScaledDistribution):
    """Regular part of the late-time density; zero beyond ``s = (1 - r)/2``."""
    r, lam = sd.r, sd.lam
    s = np.asarray(s, dtype=float)
    u = 1.0 - r - 2.0 * s  # equals -(r + 2s - 1) >= 0 on the support
    inside = (u > 0) & (s >= 0)
    u_safe = np.where(inside, u, 1.0)
    with np.errstate(over="ignore", under="ignore"):
        val = 2.0 * (1.0 - r) ** 2 * np.exp(-2.0 * s / (lam * u_safe)) / (lam * u_safe ** 2)
    out = np.where(inside, val, 0.0)
    return out[()] if out.ndim == 0 else out


def _quad_reg(sd: ScaledDistribution, weight, epsabs: float) -> float:
    # Integrate in u = (1 - r)/2 - s so the essential zero at the edge sits at u = 0.
    half = sd.support_max
    f = lambda u: weight(half - u) * p_reg(half - u, sd)  # noqa: E731
    # The peak near s = 0 has width ~ lam (1 - r) / 2.
    width = min(half, sd.lam * (1.0 - sd.r) / 2.0)
    points = sorted({half - width, half - width / 10.0, half - width / 100.0} - {0.0, half})
    points = [p for p in points if 0.0 < p < half]
    value, _ = integrate.quad(f, 0.0, half, epsabs=epsabs, epsrel=1e-13, limit=500,
                              points=points or None)
    return value


def reg_weight(sd: ScaledDistribution, epsabs: float = 1e-12) -> float:
    """Quadrature of ``P_reg`` over its support (equals ``1 - r``)."""
    return _quad_reg(sd, lambda s: 1.0, epsabs)


def reg_moment(sd: ScaledDistribution, k: int = 1, epsabs: float = 1e-12) -> float:
    """Quadrature of ``s^k P_reg(s)``."""
    return _quad_reg(sd, lambda s: s ** k, epsabs)


def mean_size_late(sd: ScaledDistribution) -> float:
    """Mean operator size ``N (1-r)^2 / 2 * [1 - (1/lam) e^{1/lam} Gamma(0, 1/lam)]``."""
    x = 1.0 / sd.lam
    return sd.N * (1.0 - sd.r) ** 2 / 2.0 * (1.0 - x * expint_gamma0_scaled(x))


def lambda_of_t(t: float, r: float, N: int) -> float:
    """Scramblon propagator ``e^{(1-r)t} / C`` with ``C = N (1-r)^2 / 2``."""
    if not 0 <= r < 1:
        raise ValueError(f"lambda(t) needs 0 <= r < 1, got {r}")
    if N < 1:
        raise ValueError("N must be >= 1")
    C = N * (1.0 - r) ** 2 / 2.0
    return math.exp((1.0 - r) * t) / C
