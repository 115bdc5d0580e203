"""Estimator-style front ends: ``fit`` a model, ``predict`` ``P(n, t)`` on a time grid.

All solvers share the same surface so they can be swapped, compared and have
their settings recorded through ``get_params``::

    solver = MasterEquationSolver(leak_bound=1e-9).fit(from_r(0.5))
    P = solver.predict(np.linspace(0, 5, 11))   # shape (11, n_max + 1)
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import branching, closed_form, meanfield, sectors
from .model import ModelSpec, Rates, derive_rates, load_model, model_from_json

__all__ = [
    "check_model",
    "check_times",
    "NotClosedFormError",
    "ClosedFormSolver",
    "MasterEquationSolver",
    "SeriesSolver",
    "BranchingMonteCarlo",
    "SectorChainSolver",
    "SOLVERS",
]


class NotClosedFormError(ValueError):
    pass


def check_model(model) -> ModelSpec:
    """Accept a ``ModelSpec``, a mapping, a JSON string or a path to a model file."""
    if isinstance(model, ModelSpec):
        return model
    if isinstance(model, dict):
        return model_from_json(model)
    if isinstance(model, (str, Path)):
        text = str(model)
        if text.lstrip().startswith("{"):
            return model_from_json(text)
        return load_model(model)
    raise TypeError(f"cannot interpret {type(model).__name__} as a model")


def check_times(times) -> np.ndarray:
    """1-d, finite, non-negative, strictly increasing times (a single column is flattened)."""
    t = np.asarray(times, dtype=float)
    if t.ndim == 2 and t.shape[1] == 1:
        t = t[:, 0]
    t = np.atleast_1d(t)
    if t.ndim != 1 or t.size == 0:
        raise ValueError(f"expected a 1-d time grid, got shape {t.shape}")
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise ValueError("times must be finite and non-negative")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    return t


class _SizeSolver(BaseEstimator):
    def fit(self, model, y=None):
        self.model_ = check_model(model)
        self.rates_: Rates = derive_rates(self.model_)
        self.jumps_ = meanfield.master_equation_rates(self.rates_, self.model_.q)
        self._fit()
        return self

    def _fit(self):
        pass

    def predict(self, times) -> np.ndarray:
        """``P[i, n]`` at ``times[i]``; rows are padded to a common width."""
        dists = self.predict_distributions(times)
        width = max(len(d.probs) for d in dists)
        out = np.zeros((len(dists), width))
        for i, d in enumerate(dists):
            out[i, : len(d.probs)] = d.probs
        return out

    def predict_distributions(self, times) -> list[meanfield.SizeDistribution]:
        raise NotImplementedError

    def mean_size(self, times) -> np.ndarray:
        return np.array([meanfield.moment(d, 1) for d in self.predict_distributions(times)])


class ClosedFormSolver(_SizeSolver):
    """Exact distribution for models whose generating-function flow is quadratic.

    Eligible models have ``J = 0`` and system legs only in ``{1, 2, 3}``; time
    is rescaled by ``kappa_eff = 4 U_3``.  ``U_3 = 0`` reduces to pure decay.
    """

    def __init__(self, n_max: int = 200):
        self.n_max = n_max

    def _fit(self):
        legs = {n for n, u in self.rates_.U.items() if u > 0 and n > 0}
        if (self.model_.J > 0) or not legs <= {1, 2, 3}:
            raise NotClosedFormError(
                "closed form needs J = 0 and couplings with 1, 2 or 3 system legs only"
            )

    def predict_distributions(self, times):
        check_is_fitted(self, "rates_")
        t = check_times(times)
        n = np.arange(self.n_max + 1)
        rates = self.rates_
        out = []
        for ti in t:
            if rates.kappa_eff > 0:
                params = closed_form.EarlyTimeParams(rates.r, rates.kappa_eff * ti)
                probs = np.asarray(closed_form.p_exact(n, params), dtype=float)
                leaked = closed_form.p_exact_tail(self.n_max, params)
            else:
                survive = math.exp(-rates.gamma * ti)
                probs = np.zeros(self.n_max + 1)
                probs[0], probs[1] = 1.0 - survive, survive
                leaked = 0.0
            out.append(meanfield.SizeDistribution(float(ti), probs, leaked))
        return out


class MasterEquationSolver(_SizeSolver):
    def __init__(self, n_max: int | None = None, leak_bound: float = meanfield.LEAK_BOUND,
                 rtol: float = meanfield.RTOL, atol: float | None = None, n0: int = 1):
        self.n_max = n_max
        self.leak_bound = leak_bound
        self.rtol = rtol
        self.atol = atol
        self.n0 = n0

    def predict_distributions(self, times):
        check_is_fitted(self, "jumps_")
        t = check_times(times)
        p0 = np.zeros(self.n0 + 1)
        p0[self.n0] = 1.0
        grid = t if t[0] == 0 else np.concatenate([[0.0], t])
        dists = meanfield.evolve_master(p0, self.jumps_, grid, n_max=self.n_max,
                                        leak_bound=self.leak_bound, rtol=self.rtol, atol=self.atol)
        return dists if t[0] == 0 else dists[1:]


class SeriesSolver(_SizeSolver):
    def __init__(self, n_max: int | None = None, leak_bound: float = meanfield.LEAK_BOUND,
                 rtol: float = meanfield.RTOL, atol: float = meanfield.ATOL, n0: int = 1):
        self.n_max = n_max
        self.leak_bound = leak_bound
        self.rtol = rtol
        self.atol = atol
        self.n0 = n0

    def predict_series(self, times) -> list[meanfield.GenFunSeries]:
        check_is_fitted(self, "jumps_")
        t = check_times(times)
        n_max = self.n_max
        if n_max is None:
            n_max = meanfield.default_n_max(self.jumps_, t[-1], self.leak_bound, self.n0)
        z0 = meanfield.GenFunSeries.initial(n_max, self.n0)
        grid = t if t[0] == 0 else np.concatenate([[0.0], t])
        series = meanfield.evolve_series(z0, self.jumps_, grid, leak_bound=self.leak_bound,
                                         rtol=self.rtol, atol=self.atol)
        return series if t[0] == 0 else series[1:]

    def predict_distributions(self, times):
        return [s.to_distribution() for s in self.predict_series(times)]


class BranchingMonteCarlo(_SizeSolver):
    """Gillespie estimate of ``P(n, t)``; ``predict`` returns the empirical frequencies."""

    def __init__(self, n_traj: int = 100_000, seed: int | None = None, n_jobs: int = 1,
                 n0: int = 1, n_max: int = 200, z: float = branching.Z95):
        self.n_traj = n_traj
        self.seed = seed
        self.n_jobs = n_jobs
        self.n0 = n0
        self.n_max = n_max
        self.z = z

    def _fit(self):
        self.branching_model_ = branching.BranchingModel.from_jumps(self.jumps_)
        self.seed_ = branching.seed_from_env() if self.seed is None else int(self.seed)

    def estimate(self, times) -> list[branching.MCEstimate]:
        check_is_fitted(self, "branching_model_")
        t = check_times(times)
        return branching.estimate_distribution(self.branching_model_, self.n0, t, self.n_traj,
                                               self.seed_, n_jobs=self.n_jobs, z=self.z)

    def predict_distributions(self, times):
        n = np.arange(self.n_max + 1)
        out = []
        for est in self.estimate(times):
            probs = est.p_hat(n)
            out.append(meanfield.SizeDistribution(est.t, probs, max(0.0, 1.0 - probs.sum())))
        return out


class SectorChainSolver(_SizeSolver):
    """Finite-(N, M) sector chain; ``predict`` returns the system-size marginal."""

    def __init__(self, method: str = "uniformization", tol: float = sectors.TOL,
                 rate_constant: float = sectors.RATE_CONSTANT, n0: int = 1):
        self.method = method
        self.tol = tol
        self.rate_constant = rate_constant
        self.n0 = n0

    def _fit(self):
        self.chain_ = sectors.build_sector_chain(self.model_, rate_constant=self.rate_constant)

    def predict_weights(self, times) -> list[np.ndarray]:
        check_is_fitted(self, "chain_")
        t = check_times(times)
        w0 = sectors.initial_weights(self.chain_, self.n0, 0)
        return sectors.evolve_chain(self.chain_, w0, t, method=self.method, tol=self.tol)

    def predict_distributions(self, times):
        t = check_times(times)
        return [meanfield.SizeDistribution(float(ti), sectors.system_marginal(self.chain_, w), 0.0)
                for ti, w in zip(t, self.predict_weights(t))]


SOLVERS = {
    "closed": ClosedFormSolver,
    "master": MasterEquationSolver,
    "series": SeriesSolver,
    "mc": BranchingMonteCarlo,
    "sector": SectorChainSolver,
}
