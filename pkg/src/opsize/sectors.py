"""Exact disorder-averaged weight dynamics of Majorana strings at finite (N, M).

For white-noise couplings ``H = sum_A g_A(t) T_A`` with variance ``v_A``, the
averaged squared coefficients of the string expansion perform a Markov
chain: a string ``S`` that anticommutes with ``T_A`` moves to ``T_A S`` at rate
``c * v_A`` (and commuting terms leave it alone).  Strings with the same
numbers ``n`` of system and ``m`` of environment Majoranas are equivalent
under permutations, so the chain lumps exactly onto sectors ``(n, m)``.

A term class with ``n_s`` system and ``m_e`` environment legs, overlapping
a string in ``k_s`` system and ``k_e`` environment indices, anticommutes
with it iff ``(n + m)(n_s + m_e) - (k_s + k_e)`` is odd and sends
``(n, m) -> (n + n_s - 2 k_s, m + m_e - 2 k_e)``.  The number of such terms is
``C(n, k_s) C(N - n, n_s - k_s) C(m, k_e) C(M - m, m_e - k_e)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import gammaln
from scipy.stats import poisson
from scipy.integrate import solve_ivp

from .model import ModelSpec, derive_rates

__all__ = [
    "RATE_CONSTANT",
    "SectorChain",
    "SectorBudgetError",
    "anticommutes",
    "term_variance",
    "build_sector_chain",
    "evolve_chain",
    "initial_weights",
    "system_marginal",
    "mean_size",
    "fit_growth_rate",
    "calibrate_rate_constant",
    "meanfield_convergence_report",
]

# Weight-transfer rate per unit coupling variance; fixed by the q-body match
# (see ``calibrate_rate_constant``).
RATE_CONSTANT = 4.0
SECTOR_BUDGET = 100_000_000
TOL = 1e-10


class SectorBudgetError(MemoryError):
    pass


def anticommutes(size_s: int, size_t: int, overlap: int) -> bool:
    """Majorana strings of sizes ``a``, ``b`` sharing ``k`` indices anticommute iff ``ab - k`` is odd."""
    if overlap > min(size_s, size_t) or overlap < 0:
        raise ValueError("overlap exceeds string sizes")
    return (size_s * size_t - overlap) % 2 == 1


def term_variance(n_s: int, m_e: int, strength: float, N: int, M: int) -> float:
    """Per-term white-noise variance ``(n_s-1)! m_e! V / (N^{n_s-1} M^{m_e})``."""
    return math.exp(gammaln(n_s) + gammaln(m_e + 1) - (n_s - 1) * math.log(N) - m_e * math.log(M)) * strength


def _log_comb(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    valid = (k >= 0) & (k <= n)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(k + 1) - gammaln(np.where(valid, n - k, 0) + 1)
    return np.where(valid, out, -np.inf)


@dataclass
class SectorChain:
    """Forward generator over the ``(N+1) x (m_dim)`` sector grid, flattened as ``n * m_dim + m``."""

    N: int
    M: int
    generator: sparse.csr_matrix
    m_dim: int
    parity_conserved: bool = True

    @property
    def n_sectors(self) -> int:
        return (self.N + 1) * self.m_dim

    def index(self, n: int, m: int) -> int:
        return n * self.m_dim + m

    def rate(self, src: tuple[int, int], dst: tuple[int, int]) -> float:
        return float(self.generator[self.index(*dst), self.index(*src)])

    def out_rate(self, n: int, m: int) -> float:
        return -float(self.generator[self.index(n, m), self.index(n, m)])

    @property
    def max_out_rate(self) -> float:
        return float(-self.generator.diagonal().min(initial=0.0))

    def parity(self) -> np.ndarray:
        n = np.repeat(np.arange(self.N + 1), self.m_dim)
        m = np.tile(np.arange(self.m_dim), self.N + 1)
        return (n + m) % 2


def _term_classes(spec: ModelSpec):
    classes = []
    if spec.J > 0:
        classes.append((spec.q, 0, spec.J))
    for c in spec.couplings:
        if c.V > 0 and c.n_s > 0:
            classes.append((c.n_s, c.m_e, c.V))
    return classes


def build_sector_chain(spec: ModelSpec, rate_constant: float = RATE_CONSTANT,
                       budget: int = SECTOR_BUDGET) -> SectorChain:
    """Assemble the exact sector generator for ``spec``.

    When no term has environment legs the environment count stays at its
    initial value, so only ``m = 0`` is kept.
    """
    N, M = spec.N, spec.M
    classes = _term_classes(spec)
    has_env = any(m_e > 0 for _, m_e, _ in classes)
    m_dim = M + 1 if has_env else 1
    n_sectors = (N + 1) * m_dim
    n_moves = sum((n_s + 1) * (m_e + 1) for n_s, m_e, _ in classes)
    if n_sectors * (n_moves + 1) > budget:
        raise SectorBudgetError(
            f"{n_sectors} sectors x {n_moves + 1} stencil entries exceeds the budget {budget}; "
            f"try N <= {int(math.sqrt(budget / (n_moves + 1) / 20))} with M = 20 N"
        )
    n_grid, m_grid = np.meshgrid(np.arange(N + 1), np.arange(m_dim), indexing="ij")
    n_flat = n_grid.ravel()
    m_flat = m_grid.ravel()
    src = np.arange(n_sectors)
    rows, cols, vals = [], [], []
    out_total = np.zeros(n_sectors)
    for n_s, m_e, strength in classes:
        v = rate_constant * term_variance(n_s, m_e, strength, N, M)
        for k_s in range(n_s + 1):
            for k_e in range(m_e + 1):
                # (n+m)(n_s+m_e) is even since n_s+m_e is even
                if (k_s + k_e) % 2 == 0:
                    continue
                log_count = (_log_comb(n_flat, k_s) + _log_comb(N - n_flat, n_s - k_s)
                             + _log_comb(m_flat, k_e) + _log_comb(M - m_flat, m_e - k_e))
                ok = np.isfinite(log_count)
                rate = v * np.exp(log_count[ok])
                new_n = n_flat[ok] + n_s - 2 * k_s
                new_m = m_flat[ok] + m_e - 2 * k_e
                rows.append(new_n * m_dim + new_m)
                cols.append(src[ok])
                vals.append(rate)
                np.add.at(out_total, src[ok], rate)
    rows.append(src)
    cols.append(src)
    vals.append(-out_total)
    G = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_sectors, n_sectors)
    )
    return SectorChain(N=N, M=M, generator=G, m_dim=m_dim)


def initial_weights(chain: SectorChain, n: int = 1, m: int = 0) -> np.ndarray:
    w = np.zeros(chain.n_sectors)
    w[chain.index(n, m)] = 1.0
    return w


def _uniformized_step(P: sparse.csr_matrix, v: np.ndarray, mean: float, tol: float) -> np.ndarray:
    k_max = int(poisson.isf(tol, mean)) + 1
    weights = poisson.pmf(np.arange(k_max + 1), mean)
    out = weights[0] * v
    term = v
    for k in range(1, k_max + 1):
        term = P @ term
        out += weights[k] * term
    return out


def evolve_chain(chain: SectorChain, w0: np.ndarray, t_grid: Sequence[float], method: str = "uniformization",
                 tol: float = TOL, max_poisson_mean: float = 50.0) -> list[np.ndarray]:
    """Weights at each grid time.  ``method`` is ``"uniformization"`` or ``"rk45"``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be non-negative and strictly increasing")
    w0 = np.asarray(w0, dtype=float)
    if abs(math.fsum(w0) - 1.0) > tol:
        raise ValueError("initial weights must be normalised")
    G = chain.generator
    lam = chain.max_out_rate
    out = []
    if method == "rk45":
        if t_grid[-1] == 0 or lam == 0:
            return [w0.copy() for _ in t_grid]
        sol = solve_ivp(lambda t, y: G @ y, (0.0, t_grid[-1]), w0, method="RK45", t_eval=t_grid,
                        rtol=tol, atol=tol * 1e-3)
        out = [sol.y[:, k].copy() for k in range(len(t_grid))]
    elif method == "uniformization":
        P = (sparse.identity(chain.n_sectors, format="csr") + G / lam) if lam > 0 else None
        v = w0.copy()
        t_prev = 0.0
        for t in t_grid:
            dt = t - t_prev
            if P is not None and dt > 0:
                n_sub = max(1, math.ceil(lam * dt / max_poisson_mean))
                for _ in range(n_sub):
                    v = _uniformized_step(P, v, lam * dt / n_sub, tol / n_sub / len(t_grid))
            out.append(v.copy())
            t_prev = t
    else:
        raise ValueError(f"unknown method {method!r}")
    for t, w in zip(t_grid, out):
        drift = abs(math.fsum(w) - 1.0)
        if drift > tol or w.min() < -tol:
            raise ArithmeticError(f"weight conservation violated at t={t:g}: |sum - 1| = {drift:.2e}")
    return out


def system_marginal(chain: SectorChain, w: np.ndarray) -> np.ndarray:
    """Finite-size ``P(n, t)``: weights summed over the environment count."""
    return w.reshape(chain.N + 1, chain.m_dim).sum(axis=1)


def mean_size(chain: SectorChain, w: np.ndarray) -> float:
    return float(np.arange(chain.N + 1) @ system_marginal(chain, w))


def fit_growth_rate(t, mean) -> float:
    """Least-squares slope of ``ln(mean)`` against ``t``."""
    slope, _ = np.polyfit(np.asarray(t, dtype=float), np.log(np.asarray(mean, dtype=float)), 1)
    return float(slope)


def calibrate_rate_constant(q: int = 4, N_values: Sequence[int] = (1_000, 10_000, 100_000, 1_000_000)) -> float:
    """Rate constant making the q-body size growth at ``n = 1`` equal ``4 J (q - 2)``.

    Evaluates the unit-constant chain's initial growth ``sum rate * (n' - 1)``
    from the single-Majorana sector with ``J = 1`` at increasing ``N`` and
    Richardson-extrapolates in ``1/N``.
    """
    growth = []
    for N in N_values:
        v = term_variance(q, 0, 1.0, N, 1)
        # from n = 1 only k_s = 1 is possible: C(1,1) C(N-1, q-1) terms, size 1 -> q-1+... = q - 1 + 0
        count = math.exp(_log_comb(N - 1, q - 1))
        growth.append(v * count * (q - 2))
    h = np.array([1.0 / N for N in N_values])
    slope, intercept = np.polyfit(h, np.array(growth), 1)
    return 4.0 * (q - 2) / intercept


def meanfield_convergence_report(spec_for_N, N_list: Sequence[int], t_probe: float = 1.0,
                                 n_points: int = 11, target: float | None = None,
                                 method: str = "uniformization") -> list[dict]:
    """Fit the early-time growth of the mean size for each ``N``.

    ``spec_for_N`` maps ``N`` to a ``ModelSpec`` (normally with ``M = 20 N``).
    The target defaults to the mean-field rate ``kappa_eff - gamma``.
    """
    t = np.linspace(0.0, t_probe, n_points)
    rows = []
    for N in N_list:
        spec = spec_for_N(N)
        rates = derive_rates(spec)
        goal = rates.growth_rate if target is None else target
        chain = build_sector_chain(spec)
        ws = evolve_chain(chain, initial_weights(chain), t, method=method)
        means = [mean_size(chain, w) for w in ws]
        fitted = fit_growth_rate(t, means)
        rows.append({
            "N": N,
            "M": spec.M,
            "fitted_rate": fitted,
            "target_rate": goal,
            "error": abs(fitted - goal),
            "mean_at_probe": means[-1],
            "p0_at_probe": float(system_marginal(chain, ws[-1])[0]),
        })
    return rows
