"""Operator-size growth in open Brownian SYK models."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("opsize")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .model import (
    CouplingTerm,
    ModelSpec,
    ModelValidationError,
    NoDynamicsError,
    Phase,
    Rates,
    classify_phase,
    derive_rates,
    from_r,
    load_model,
    scrambling_time_estimate,
)
from .estimators import (
    BranchingMonteCarlo,
    ClosedFormSolver,
    MasterEquationSolver,
    SectorChainSolver,
    SeriesSolver,
)

__all__ = [
    "__version__",
    "CouplingTerm",
    "ModelSpec",
    "ModelValidationError",
    "NoDynamicsError",
    "Phase",
    "Rates",
    "classify_phase",
    "derive_rates",
    "from_r",
    "load_model",
    "scrambling_time_estimate",
    "BranchingMonteCarlo",
    "ClosedFormSolver",
    "MasterEquationSolver",
    "SectorChainSolver",
    "SeriesSolver",
]
