"""Early-time (large-N) operator size dynamics.

The mean-field generating function obeys

    dz/dt = 4 J (z^{q-1} - z) + 4 sum_n U_n (z^{n-1} - z)

which is the backward equation of a branching process: every system
Majorana is independently replaced by ``k - 1`` of them at per-particle rate
``R_k`` (``R_q = 4 J`` and ``R_k = 4 U_k``).  Two independent routes are
provided:

* ``evolve_master`` integrates the forward (master) equation for ``P(n, t)``
  on a truncated grid, with an absorbing overflow state that tracks leaked
  probability;
* ``evolve_series`` integrates ``z`` itself as a power series in
  ``w = e^{-mu}``.  Coefficient ``n`` only couples to coefficients ``<= n``, so
  the truncated series is exact up to its order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.signal import fftconvolve

from .model import ModelSpec, Rates, derive_rates

__all__ = [
    "Jump",
    "SizeDistribution",
    "GenFunSeries",
    "TruncationError",
    "NegativityError",
    "master_equation_rates",
    "jump_table",
    "default_n_max",
    "evolve_master",
    "evolve_series",
    "moment",
    "mean_growth_rate",
    "truncated_mul",
    "truncated_pow",
]

LEAK_BOUND = 1e-9
EPS_NEG = 1e-10
N_MAX_CAP = 1_000_000
RTOL = 1e-10
ATOL = 1e-14
STIFF_ATOL = 1e-12
STIFFNESS_LIMIT = 2e3  # max out-rate times horizon beyond which BDF is used

_FFT_THRESHOLD = 256


class TruncationError(RuntimeError):
    pass


class NegativityError(RuntimeError):
    pass


@dataclass(frozen=True)
class Jump:
    """Every particle is replaced by ``change + 1`` particles at ``rate``."""

    change: int
    rate: float


@dataclass
class SizeDistribution:
    t: float
    probs: np.ndarray
    leaked_mass: float = 0.0

    @property
    def n_max(self) -> int:
        return len(self.probs) - 1

    def total(self) -> float:
        return float(math.fsum(self.probs)) + self.leaked_mass

    def __getitem__(self, n):
        return self.probs[n]


@dataclass
class GenFunSeries:
    """Truncated series ``z = sum_n coeffs[n] w^n`` with ``w = e^{-mu}``."""

    coeffs: np.ndarray
    t: float = 0.0
    n_max: int = field(default=-1)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.n_max < 0:
            self.n_max = len(self.coeffs) - 1
        elif len(self.coeffs) != self.n_max + 1:
            padded = np.zeros(self.n_max + 1)
            k = min(len(self.coeffs), self.n_max + 1)
            padded[:k] = self.coeffs[:k]
            self.coeffs = padded

    @classmethod
    def initial(cls, n_max: int, n0: int = 1) -> "GenFunSeries":
        """``z0 = w^n0``; ``n0 = 1`` is a single Majorana, larger ``n0`` an n0-string."""
        if not 0 <= n0 <= n_max:
            raise ValueError(f"initial size {n0} outside [0, {n_max}]")
        coeffs = np.zeros(n_max + 1)
        coeffs[n0] = 1.0
        return cls(coeffs, 0.0, n_max)

    def __call__(self, mu):
        w = np.exp(-np.asarray(mu, dtype=float))
        return np.polynomial.polynomial.polyval(w, self.coeffs)

    @property
    def leaked_mass(self) -> float:
        return max(0.0, 1.0 - math.fsum(self.coeffs))

    def to_distribution(self) -> SizeDistribution:
        return SizeDistribution(self.t, self.coeffs.copy(), self.leaked_mass)


def master_equation_rates(rates: Rates, q: int, U: Mapping[int, float] | None = None) -> tuple[Jump, ...]:
    """Per-particle jump table; size-neutral (two-leg) and system-free terms drop out."""
    U = rates.U if U is None else U
    kappa_J = rates.kappa / (q - 2) if q > 2 else 0.0  # = 4 J
    by_change: dict[int, float] = {}
    if kappa_J > 0:
        by_change[q - 2] = kappa_J
    for n_s, u in U.items():
        if n_s in (0, 2) or u == 0:
            continue
        by_change[n_s - 2] = by_change.get(n_s - 2, 0.0) + 4.0 * u
    return tuple(Jump(d, by_change[d]) for d in sorted(by_change))


def jump_table(spec: ModelSpec) -> tuple[Jump, ...]:
    return master_equation_rates(derive_rates(spec), spec.q)


def _growth_and_spread(table: Sequence[Jump]) -> tuple[float, float]:
    g = math.fsum(j.change * j.rate for j in table)
    sigma2 = math.fsum(j.change ** 2 * j.rate for j in table)
    return g, sigma2


def default_n_max(table: Sequence[Jump], t_max: float, leak_bound: float = LEAK_BOUND, n0: int = 1) -> int:
    """Truncation order keeping the probability beyond it below ``leak_bound``.

    The tail is close to geometric with a scale set by the variance-to-mean
    ratio of the branching process, ``sigma^2 (e^{g t} - 1) / g``.
    """
    g, sigma2 = _growth_and_spread(table)
    if g == 0:
        spread = sigma2 * t_max
    else:
        spread = sigma2 * math.expm1(g * t_max) / g
    scale = 1.0 + spread
    mean = n0 * math.exp(g * t_max)
    estimate = mean + scale * math.log(1.0 / leak_bound) + 64
    base = max(64, math.ceil(8 * math.exp(g * t_max)))
    return int(min(N_MAX_CAP, max(base, math.ceil(estimate))))


# -- master equation -----------------------------------------------------------


def _generator(table: Sequence[Jump], n_max: int) -> sparse.csr_matrix:
    """Forward generator on states ``0..n_max`` plus an overflow sink at ``n_max + 1``."""
    size = n_max + 2
    n = np.arange(1, n_max + 1)
    rows, cols, vals = [], [], []
    total = np.zeros(size)
    for jump in table:
        out = jump.rate * n
        target = np.minimum(n + jump.change, n_max + 1)
        rows.append(target)
        cols.append(n)
        vals.append(out)
        total[1:n_max + 1] += out
    rows.append(np.arange(size))
    cols.append(np.arange(size))
    vals.append(-total)
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )


def _check_times(t_grid) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t.ndim != 1 or len(t) == 0:
        raise ValueError("t_grid must be a non-empty 1-d sequence")
    if np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be non-negative and strictly increasing")
    return t


def _check_state(probs: np.ndarray, t: float, leaked: float, leak_bound: float, n_max: int):
    worst = probs.min()
    if worst < -EPS_NEG:
        n_bad = int(np.argmin(probs))
        raise NegativityError(f"P(n={n_bad}, t={t:g}) = {worst:.3e} is below -{EPS_NEG:g}")
    if leaked > leak_bound:
        raise TruncationError(
            f"probability {leaked:.3e} leaked beyond n_max={n_max} by t={t:g} "
            f"(bound {leak_bound:g}); increase n_max"
        )


def evolve_master(
    P0: SizeDistribution | np.ndarray,
    table: Sequence[Jump],
    t_grid,
    n_max: int | None = None,
    leak_bound: float = LEAK_BOUND,
    rtol: float = RTOL,
    atol: float | None = None,
) -> list[SizeDistribution]:
    """Integrate the truncated master equation from ``P0`` (taken at t = 0).

    Explicit Dormand-Prince stepping is used while the largest out-rate times
    the horizon stays moderate; beyond that the grid is stiff and BDF with the
    exact sparse Jacobian takes over.
    """
    t_grid = _check_times(t_grid)
    p0 = np.asarray(P0.probs if isinstance(P0, SizeDistribution) else P0, dtype=float)
    if abs(math.fsum(p0) - 1.0) > 1e-12:
        raise ValueError("P0 must be normalised")
    if n_max is None:
        support = int(np.flatnonzero(p0).max()) if np.any(p0) else 0
        n_max = max(len(p0) - 1, default_n_max(table, t_grid[-1], leak_bound, max(support, 1)))
    if len(p0) > n_max + 1:
        raise ValueError("P0 extends beyond n_max")
    y0 = np.zeros(n_max + 2)
    y0[: len(p0)] = p0
    A = _generator(table, n_max)
    t_eval = t_grid
    t_span = (0.0, float(t_grid[-1]))
    if t_span[1] == 0.0 or not table:
        Y = np.repeat(y0[:, None], len(t_grid), axis=1)
    else:
        stiffness = abs(A.diagonal()).max() * t_span[1]
        if stiffness < STIFFNESS_LIMIT:
            sol = solve_ivp(lambda t, y: A @ y, t_span, y0, method="DOP853", t_eval=t_eval,
                            rtol=rtol, atol=ATOL if atol is None else atol)
        else:
            sol = solve_ivp(lambda t, y: A @ y, t_span, y0, method="BDF", t_eval=t_eval,
                            rtol=rtol, atol=STIFF_ATOL if atol is None else atol, jac=A.tocsc())
        if not sol.success:
            raise RuntimeError(f"master equation integration failed: {sol.message}")
        Y = sol.y
    out = []
    for k, t in enumerate(t_grid):
        probs = Y[: n_max + 1, k].copy()
        leaked = float(Y[n_max + 1, k])
        _check_state(probs, t, leaked, leak_bound, n_max)
        out.append(SizeDistribution(float(t), probs, max(leaked, 0.0)))
    return out


# -- truncated power series ----------------------------------------------------


def truncated_mul(a: np.ndarray, b: np.ndarray, n_max: int) -> np.ndarray:
    """Product of two series truncated at order ``n_max``."""
    if len(a) > _FFT_THRESHOLD:
        return fftconvolve(a, b)[: n_max + 1]
    return np.convolve(a, b)[: n_max + 1]


def truncated_pow(a: np.ndarray, k: int, n_max: int) -> np.ndarray:
    """``a^k`` by binary exponentiation with truncation after every product."""
    result = np.zeros(n_max + 1)
    result[0] = 1.0
    base = a
    while k > 0:
        if k & 1:
            result = truncated_mul(result, base, n_max)
        k >>= 1
        if k:
            base = truncated_mul(base, base, n_max)
    return result


def _series_rhs(table: Sequence[Jump], n_max: int):
    # R (z^{change+1} - z) for each jump
    powers = sorted({j.change + 1 for j in table})
    rate_of = {j.change + 1: j.rate for j in table}
    total = math.fsum(j.rate for j in table)

    def rhs(t, c):
        acc = -total * c
        for p in powers:
            acc = acc + rate_of[p] * truncated_pow(c, p, n_max)
        return acc

    return rhs


def evolve_series(
    z0: GenFunSeries | None,
    table: Sequence[Jump],
    t_grid,
    n_max: int | None = None,
    leak_bound: float = LEAK_BOUND,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> list[GenFunSeries]:
    """Integrate the generating-function ODE as a truncated series in ``w``."""
    t_grid = _check_times(t_grid)
    if z0 is None:
        if n_max is None:
            n_max = default_n_max(table, t_grid[-1], leak_bound)
        z0 = GenFunSeries.initial(n_max)
    elif n_max is not None and n_max != z0.n_max:
        z0 = GenFunSeries(z0.coeffs, z0.t, n_max)
    n_max = z0.n_max
    y0 = z0.coeffs.astype(float)
    t_span = (0.0, float(t_grid[-1]))
    if t_span[1] == 0.0 or not table:
        Y = np.repeat(y0[:, None], len(t_grid), axis=1)
    else:
        sol = solve_ivp(_series_rhs(table, n_max), t_span, y0, method="DOP853", t_eval=t_grid,
                        rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"series integration failed: {sol.message}")
        Y = sol.y
    out = []
    for k, t in enumerate(t_grid):
        series = GenFunSeries(Y[:, k].copy(), float(t), n_max)
        _check_state(series.coeffs, t, series.leaked_mass, leak_bound, n_max)
        out.append(series)
    return out


def moment(dist: SizeDistribution | GenFunSeries, k: int) -> float:
    """``sum_n n^k P(n)`` over the retained support; ``k = 0`` gives the retained mass."""
    if k < 0:
        raise ValueError("moment order must be >= 0")
    probs = dist.coeffs if isinstance(dist, GenFunSeries) else dist.probs
    n = np.arange(len(probs), dtype=float)
    return float(math.fsum(n ** k * probs))


def mean_growth_rate(table: Sequence[Jump]) -> float:
    """``d ln(mean size)/dt``, i.e. ``kappa_eff - gamma``."""
    return _growth_and_spread(table)[0]
