"""Model parameters, derived rates and phase classification.

A model is the coupling content of a Brownian all-to-all Majorana system
(``q``-body strength ``J``) plus a table of system-environment coupling
classes, each with ``n_s`` system legs, ``m_e`` environment legs and strength
``V``.  All rates are in the same (inverse time) units as ``J`` and ``V``.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

__all__ = [
    "CouplingTerm",
    "ModelSpec",
    "Rates",
    "Phase",
    "PhaseLabel",
    "ModelValidationError",
    "NoDynamicsError",
    "derive_rates",
    "classify_phase",
    "scrambling_time_estimate",
    "from_r",
    "load_model",
    "parse_model_config",
    "format_model_config",
    "model_to_json",
    "model_from_json",
]

DEFAULT_TIE_TOL = 1e-12
DEFAULT_MIN_ENV_RATIO = 10.0


class ModelValidationError(ValueError):
    """Raised for an invalid model; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class NoDynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class CouplingTerm:
    n_s: int
    m_e: int
    V: float

    def __post_init__(self):
        for name in ("n_s", "m_e"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 0:
                raise ModelValidationError(name, f"must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n_s == 0 and self.m_e == 0:
            raise ModelValidationError("n_s", "a coupling needs at least one leg")
        if (self.n_s + self.m_e) % 2:
            raise ModelValidationError(
                "n_s+m_e", f"total leg count must be even, got n_s={self.n_s}, m_e={self.m_e}"
            )
        if not math.isfinite(self.V) or self.V < 0:
            raise ModelValidationError("V", f"must be finite and >= 0, got {self.V!r}")
        object.__setattr__(self, "V", float(self.V))


@dataclass(frozen=True)
class ModelSpec:
    """System-environment model.

    ``q`` must be even and at least 4; ``M >= N`` is enforced, and a warning is
    issued when ``M / N`` falls below ``min_env_ratio`` since the mean-field
    results assume an environment much larger than the system.
    """

    q: int = 4
    J: float = 0.0
    couplings: tuple[CouplingTerm, ...] = ()
    N: int = 100
    M: int = 2000
    min_env_ratio: float = field(default=DEFAULT_MIN_ENV_RATIO, compare=False, repr=False)

    def __post_init__(self):
        if isinstance(self.q, bool) or int(self.q) != self.q or self.q < 4 or self.q % 2:
            raise ModelValidationError("q", f"must be an even integer >= 4, got {self.q!r}")
        object.__setattr__(self, "q", int(self.q))
        if not math.isfinite(self.J) or self.J < 0:
            raise ModelValidationError("J", f"must be finite and >= 0, got {self.J!r}")
        object.__setattr__(self, "J", float(self.J))
        for name in ("N", "M"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ModelValidationError(name, f"must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.M < self.N:
            raise ModelValidationError("M", f"environment must be at least as large as the system (N={self.N}, M={self.M})")
        if self.M < self.min_env_ratio * self.N:
            warnings.warn(
                f"M/N = {self.M / self.N:.3g} is below {self.min_env_ratio:g}; "
                "environment-to-system back-flow is not negligible",
                stacklevel=3,
            )

        terms = []
        for term in self.couplings:
            if not isinstance(term, CouplingTerm):
                term = CouplingTerm(*term)
            terms.append(term)
        seen = set()
        for term in terms:
            key = (term.n_s, term.m_e)
            if key in seen:
                raise ModelValidationError("couplings", f"duplicate coupling class (n_s, m_e) = {key}")
            seen.add(key)
        object.__setattr__(self, "couplings", tuple(sorted(terms, key=lambda c: (c.n_s, c.m_e))))

    def U(self) -> dict[int, float]:
        """Coupling strength summed over environment legs, keyed by ``n_s``."""
        out: dict[int, float] = {}
        for term in self.couplings:
            out[term.n_s] = out.get(term.n_s, 0.0) + term.V
        return out

    def replace(self, **changes) -> "ModelSpec":
        params = dict(q=self.q, J=self.J, couplings=self.couplings, N=self.N, M=self.M,
                      min_env_ratio=self.min_env_ratio)
        params.update(changes)
        return ModelSpec(**params)

    def digest(self) -> str:
        return hashlib.sha256(model_to_json(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Rates:
    kappa: float
    gamma: float
    kappa_prime: float
    kappa_eff: float
    Gamma: float
    U: Mapping[int, float]

    @property
    def r(self) -> float:
        """``gamma / kappa_eff``; NaN when ``kappa_eff == 0``."""
        if self.kappa_eff == 0:
            return math.nan
        return self.gamma / self.kappa_eff

    @property
    def r_defined(self) -> bool:
        return self.kappa_eff != 0

    @property
    def growth_rate(self) -> float:
        """Net exponential rate of the mean size, ``kappa_eff - gamma``."""
        return self.kappa_eff - self.gamma


class Phase(str, enum.Enum):
    SCRAMBLING = "Scrambling"
    CRITICAL = "Critical"
    DISSIPATIVE = "Dissipative"


@dataclass(frozen=True)
class PhaseLabel:
    phase: Phase
    margin: float

    def __str__(self):
        return self.phase.value


def derive_rates(spec: ModelSpec) -> Rates:
    # Terms with n_s == 2 only enter the single-fermion decay rate Gamma.
    U = spec.U()
    kappa = 4.0 * spec.J * (spec.q - 2)
    gamma = 4.0 * U.get(1, 0.0)
    kappa_prime = 4.0 * math.fsum((n - 2) * u for n, u in U.items() if n >= 3)
    Gamma = 4.0 * (spec.J + math.fsum(u for n, u in U.items() if n >= 1))
    return Rates(
        kappa=kappa,
        gamma=gamma,
        kappa_prime=kappa_prime,
        kappa_eff=kappa + kappa_prime,
        Gamma=Gamma,
        U=dict(sorted(U.items())),
    )


def classify_phase(rates: Rates, tie_tol: float = DEFAULT_TIE_TOL) -> PhaseLabel:
    """Scrambling if ``gamma < kappa_eff``, Dissipative if ``gamma > kappa_eff``.

    ``tie_tol`` is relative to ``max(gamma, kappa_eff)``.
    """
    if rates.kappa_eff == 0 and rates.gamma == 0:
        raise NoDynamicsError("no dynamics: kappa_eff and gamma are both zero")
    margin = rates.kappa_eff - rates.gamma
    if abs(margin) <= tie_tol * max(rates.kappa_eff, rates.gamma):
        return PhaseLabel(Phase.CRITICAL, margin)
    return PhaseLabel(Phase.SCRAMBLING if margin > 0 else Phase.DISSIPATIVE, margin)


def scrambling_time_estimate(rates: Rates, N: float) -> float:
    """``ln N / (kappa_eff - gamma)`` in the scrambling phase, else ``inf``."""
    margin = rates.growth_rate
    if margin <= 0:
        return math.inf
    return math.log(N) / margin


def from_r(r: float, kappa_eff: float = 1.0, N: int = 100, M: int | None = None) -> ModelSpec:
    """The ``J = 0`` model with only one- and three-leg system couplings.

    Each class carries a single environment leg; ``U_1 = r kappa_eff / 4`` and
    ``U_3 = kappa_eff / 4``.
    """
    if r < 0 or kappa_eff <= 0:
        raise ModelValidationError("r", "need r >= 0 and kappa_eff > 0")
    couplings = [CouplingTerm(3, 1, kappa_eff / 4.0)]
    if r > 0:
        couplings.append(CouplingTerm(1, 1, r * kappa_eff / 4.0))
    return ModelSpec(q=4, J=0.0, couplings=tuple(couplings), N=N, M=20 * N if M is None else M)


# -- model files -----------------------------------------------------------
#
# Grammar (one entry per line, '#' starts a comment):
#   q = <even int>
#   J = <float>
#   N = <int>
#   M = <int>
#   coupling = <n_s> <m_e> <V>      (repeatable)

_SCALAR_KEYS = {"q": int, "J": float, "N": int, "M": int}


def parse_model_config(text: str) -> ModelSpec:
    values: dict = {}
    couplings = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelValidationError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key == "coupling":
                n_s, m_e, V = value.split()
                couplings.append(CouplingTerm(int(n_s), int(m_e), float(V)))
            elif key in _SCALAR_KEYS:
                if key in values:
                    raise ModelValidationError(key, f"given twice (line {lineno})")
                values[key] = _SCALAR_KEYS[key](value)
            else:
                raise ModelValidationError(key, f"unknown key on line {lineno}")
        except ValueError as exc:
            if isinstance(exc, ModelValidationError):
                raise
            raise ModelValidationError(key, f"cannot parse {value!r} on line {lineno}") from exc
    return ModelSpec(couplings=tuple(couplings), **values)


def format_model_config(spec: ModelSpec) -> str:
    lines = [f"q = {spec.q}", f"J = {spec.J!r}", f"N = {spec.N}", f"M = {spec.M}"]
    lines += [f"coupling = {c.n_s} {c.m_e} {c.V!r}" for c in spec.couplings]
    return "\n".join(lines) + "\n"


def model_to_dict(spec: ModelSpec) -> dict:
    return {
        "q": spec.q,
        "J": spec.J,
        "N": spec.N,
        "M": spec.M,
        "couplings": [[c.n_s, c.m_e, c.V] for c in spec.couplings],
    }


def model_to_json(spec: ModelSpec) -> str:
    return json.dumps(model_to_dict(spec), sort_keys=True, separators=(",", ":"))


def model_from_json(text: str | Mapping) -> ModelSpec:
    data = json.loads(text) if isinstance(text, str) else dict(text)
    unknown = set(data) - {"q", "J", "N", "M", "couplings"}
    if unknown:
        raise ModelValidationError(sorted(unknown)[0], "unknown key")
    couplings: Iterable = data.pop("couplings", [])
    terms = []
    for c in couplings:
        if isinstance(c, Mapping):
            terms.append(CouplingTerm(c["n_s"], c["m_e"], c["V"]))
        else:
            terms.append(CouplingTerm(*c))
    return ModelSpec(couplings=tuple(terms), **data)


def load_model(path: str | Path) -> ModelSpec:
    """Read a model from a ``.json`` file or a key-value config file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return model_from_json(text)
    return parse_model_config(text)
