"""Exact stochastic simulation of the size branching process.

Each system Majorana independently triggers an event of leg count ``k`` at
per-particle rate ``R_k``, which replaces it by ``k - 1`` Majoranas (a size
change of ``k - 2``; ``k = 1`` is a death).  Size zero is absorbing.

Randomness is counter based: trajectory ``i`` under master seed ``s`` owns the
stream ``u_j = mix(key_i + (j + 1) * golden)`` with ``key_i = hash(s, i)``, so
every trajectory is reproducible on its own and an ensemble gives identical
counts however it is split across workers.
"""
from __future__ import annotations

import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .meanfield import Jump, jump_table
from .model import ModelSpec

__all__ = [
    "BranchingModel",
    "MCEstimate",
    "PopulationCapError",
    "trajectory_seed",
    "counter_uniforms",
    "gillespie_trajectory",
    "simulate_states",
    "estimate_distribution",
    "wilson_interval",
    "seed_from_env",
]

POPULATION_CAP = 10_000_000
BLOCK_SIZE = 1 << 16
Z95 = 1.959963984540054

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class PopulationCapError(RuntimeError):
    pass


# -- counter-based random numbers -------------------------------------------


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser; uint64 arithmetic wraps
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def trajectory_seed(master_seed: int, index) -> np.ndarray:
    """Per-trajectory 64-bit key derived from ``(master_seed, index)``."""
    with np.errstate(over="ignore"):
        base = _mix64(np.uint64(int(master_seed) & _MASK64) + _GOLDEN)
        idx = np.asarray(index, dtype=np.uint64)
        return _mix64(base ^ _mix64(idx * _GOLDEN + _M2))


def counter_uniforms(keys, counters) -> np.ndarray:
    """Uniforms on the open interval (0, 1), one per ``(key, counter)`` pair."""
    with np.errstate(over="ignore"):
        x = _mix64(np.asarray(keys, dtype=np.uint64)
                   + (np.asarray(counters, dtype=np.uint64) + np.uint64(1)) * _GOLDEN)
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def seed_from_env(default: int = 0) -> int:
    value = os.environ.get("OPSIZE_SEED")
    return int(value, 0) if value else default


# -- model ---------------------------------------------------------------------


@dataclass(frozen=True)
class BranchingModel:
    """Events as ``(legs k, per-particle rate R_k)``; two-leg events are excluded."""

    events: tuple[tuple[int, float], ...]

    def __post_init__(self):
        events = tuple((int(k), float(rate)) for k, rate in self.events)
        for k, rate in events:
            if k < 1 or k == 2:
                raise ValueError(f"event with {k} legs does not change the size")
            if rate < 0 or not math.isfinite(rate):
                raise ValueError(f"negative or non-finite rate {rate} for k={k}")
        object.__setattr__(self, "events", tuple(e for e in events if e[1] > 0))

    @classmethod
    def from_jumps(cls, table: Iterable[Jump]) -> "BranchingModel":
        return cls(tuple((j.change + 2, j.rate) for j in table))

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "BranchingModel":
        return cls.from_jumps(jump_table(spec))

    @property
    def total_rate(self) -> float:
        return math.fsum(rate for _, rate in self.events)

    @property
    def changes(self) -> np.ndarray:
        return np.array([k - 2 for k, _ in self.events], dtype=np.int64)

    @property
    def cumulative(self) -> np.ndarray:
        rates = np.array([rate for _, rate in self.events])
        return np.cumsum(rates) / rates.sum()


# -- single trajectory ---------------------------------------------------------


def gillespie_trajectory(model: BranchingModel, n0: int, t_end: float, seed: int,
                         cap: int = POPULATION_CAP) -> list[tuple[float, int]]:
    """Event path ``[(0, n0), (t_1, n_1), ...]`` up to ``t_end``; ``seed`` is the trajectory key."""
    if n0 < 0:
        raise ValueError("n0 must be >= 0")
    path = [(0.0, int(n0))]
    if n0 == 0 or not model.events:
        return path
    key = np.uint64(int(seed) & _MASK64)
    total = model.total_rate
    changes = model.changes
    cum = model.cumulative
    t, n, counter = 0.0, int(n0), 0
    while n > 0:
        u1, u2 = counter_uniforms([key, key], [counter, counter + 1])
        counter += 2
        t += -math.log(u1) / (n * total)
        if t > t_end:
            break
        n += int(changes[min(int(np.searchsorted(cum, u2, side="right")), len(cum) - 1)])
        if n > cap:
            raise PopulationCapError(f"population exceeded cap {cap} at t={t:g}")
        path.append((t, n))
    return path


# -- ensembles -----------------------------------------------------------------


def simulate_states(model: BranchingModel, n0: int, t_grid, master_seed: int,
                    indices: np.ndarray, cap: int = POPULATION_CAP) -> np.ndarray:
    """Sizes at each grid time for the given trajectory indices, shape ``(len(indices), len(t_grid))``.

    All trajectories advance together; each one still consumes only its own
    counter-based stream, so results match ``gillespie_trajectory``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    G = len(t_grid)
    B = len(indices)
    states = np.zeros((B, G), dtype=np.int64)
    if B == 0:
        return states
    if n0 == 0 or not model.events:
        states[:] = n0
        return states
    keys = trajectory_seed(master_seed, indices)
    total = model.total_rate
    changes = model.changes
    cum = model.cumulative
    last = len(cum) - 1

    n = np.full(B, n0, dtype=np.int64)
    t = np.zeros(B)
    counter = np.zeros(B, dtype=np.uint64)
    k_next = np.zeros(B, dtype=np.int64)
    active = np.arange(B)
    while active.size:
        na = n[active]
        u1 = counter_uniforms(keys[active], counter[active])
        u2 = counter_uniforms(keys[active], counter[active] + np.uint64(1))
        counter[active] += np.uint64(2)
        with np.errstate(divide="ignore"):
            t_new = np.where(na > 0, t[active] - np.log(u1) / (na * total), np.inf)
        # record every grid time passed before this event
        while True:
            ka = k_next[active]
            pending = ka < G
            hit = pending & (t_grid[np.minimum(ka, G - 1)] < t_new)
            if not hit.any():
                break
            rows = active[hit]
            states[rows, ka[hit]] = na[hit]
            k_next[rows] += 1
        choice = np.minimum(np.searchsorted(cum, u2, side="right"), last)
        n[active] = np.where(np.isfinite(t_new), na + changes[choice], na)
        t[active] = t_new
        if n[active].max(initial=0) > cap:
            raise PopulationCapError(f"population exceeded cap {cap}")
        active = active[k_next[active] < G]
    return states


def wilson_interval(k, n, z: float = Z95):
    """Wilson score interval ``(low, high)`` for ``k`` successes in ``n`` trials."""
    k = np.asarray(k, dtype=float)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    low = np.where(k == 0, 0.0, np.clip(centre - half, 0.0, 1.0))
    high = np.where(k == n, 1.0, np.clip(centre + half, 0.0, 1.0))
    return low, high


@dataclass
class MCEstimate:
    t: float
    counts: dict[int, int]
    n_traj: int
    mean: float = math.nan
    sem: float = math.nan
    z: float = Z95
    _total: int = field(default=0, repr=False)

    def __post_init__(self):
        self._total = sum(self.counts.values())
        if self._total != self.n_traj:
            raise ValueError("counts do not add up to n_traj")

    @property
    def degenerate(self) -> bool:
        """A single trajectory gives no usable interval."""
        return self.n_traj < 2

    def p_hat(self, n):
        n = np.atleast_1d(n)
        return np.array([self.counts.get(int(i), 0) for i in n]) / self.n_traj

    def interval(self, n, z: float | None = None):
        k = np.array([self.counts.get(int(i), 0) for i in np.atleast_1d(n)])
        return wilson_interval(k, self.n_traj, self.z if z is None else z)

    def ci_halfwidth(self, n, z: float | None = None):
        lo, hi = self.interval(n, z)
        return (hi - lo) / 2.0

    def covers(self, n, values, z: float | None = None) -> np.ndarray:
        lo, hi = self.interval(n, z)
        values = np.asarray(values)
        return (lo <= values) & (values <= hi)


def _block_counts(model, n0, t_grid, master_seed, start, stop, cap):
    states = simulate_states(model, n0, t_grid, master_seed, np.arange(start, stop, dtype=np.uint64), cap)
    out = []
    for k in range(states.shape[1]):
        values, counts = np.unique(states[:, k], return_counts=True)
        col = states[:, k].astype(float)
        out.append((dict(zip(values.tolist(), counts.tolist())), math.fsum(col), math.fsum(col * col)))
    return out


def estimate_distribution(model: BranchingModel, n0: int, t_grid: Sequence[float], n_traj: int,
                          master_seed: int, n_jobs: int = 1, cap: int = POPULATION_CAP,
                          z: float = Z95) -> list[MCEstimate]:
    """Histogram of sizes over ``n_traj`` trajectories at each grid time.

    Work is split into fixed blocks of ``BLOCK_SIZE`` trajectory indices, so
    ``n_jobs`` only changes scheduling, never the counts.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0) or np.any(t_grid < 0):
        raise ValueError("t_grid must be non-negative and strictly increasing")
    blocks = [(s, min(s + BLOCK_SIZE, n_traj)) for s in range(0, n_traj, BLOCK_SIZE)]
    if n_jobs == 1 or len(blocks) == 1:
        results = [_block_counts(model, n0, t_grid, master_seed, a, b, cap) for a, b in blocks]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_block_counts)(model, n0, t_grid, master_seed, a, b, cap) for a, b in blocks
        )
    estimates = []
    for k, t in enumerate(t_grid):
        counts: Counter = Counter()
        s1 = s2 = 0.0
        for block in results:
            c, b1, b2 = block[k]
            counts.update(c)
            s1 += b1
            s2 += b2
        mean = s1 / n_traj
        var = (s2 / n_traj - mean * mean) * n_traj / (n_traj - 1) if n_traj > 1 else math.nan
        sem = math.sqrt(max(var, 0.0) / n_traj) if n_traj > 1 else math.nan
        estimates.append(MCEstimate(float(t), dict(sorted(counts.items())), n_traj, mean, sem, z))
    return estimates
