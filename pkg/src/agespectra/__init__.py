"""Growth bounds and principal eigenvalues for age-structured populations with nonlocal dispersal."""

from .evolution import compute_diffused_propagator
from .io import load_scenario, save_scenario
from .model import KernelSpec, RateField, ScenarioConfig, ScenarioError
from .spectral import solve_spectral_bound

__version__ = "0.1.0"

__all__ = [
    "KernelSpec",
    "RateField",
    "ScenarioConfig",
    "ScenarioError",
    "compute_diffused_propagator",
    "load_scenario",
    "save_scenario",
    "solve_spectral_bound",
]
