"""Exception hierarchy."""


class FinslerFlowError(Exception):
    pass


class ConfigurationError(FinslerFlowError, ValueError):
    """Invalid configuration; ``section`` names the offending config section."""

    def __init__(self, section: str, message: str):
        self.section = section
        super().__init__(f"[{section}] {message}")


class DomainError(FinslerFlowError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class AdmissibilityError(FinslerFlowError):
    """Metric fails strong convexity or Randers admissibility."""


class SolverError(FinslerFlowError):
    """Legendre Newton iteration failed to converge."""

    def __init__(self, message: str, residual: float = float("nan"), location=None):
        self.residual = residual
        self.location = location
        super().__init__(message)


class IntegrationError(FinslerFlowError):
    """Time or geodesic integration lost accuracy or positivity."""
