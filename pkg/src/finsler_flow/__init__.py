"""Numerical checks of gradient and Harnack estimates for heat flow on evolving Finsler tori."""

from .config import ScenarioConfig, load_bundled, load_config
from .errors import (AdmissibilityError, ConfigurationError, DomainError, FinslerFlowError, IntegrationError,
                     SolverError)
from .pipeline import run_scenario

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "load_config", "load_bundled", "run_scenario", "FinslerFlowError",
           "ConfigurationError", "DomainError", "AdmissibilityError", "SolverError", "IntegrationError"]
