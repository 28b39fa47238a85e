"""
Errors Module
Exception hierarchy shared by the geometry, material and solver layers
"""

from typing import List, Optional, Tuple


class SimulationError(Exception):
    """Base class for every error raised by the simulator"""


class InvalidArgumentError(SimulationError, ValueError):
    """A numerical kernel received input outside its domain"""


class GeometryError(SimulationError):
    """Degenerate or inconsistent geometry"""


class TemperatureRangeError(SimulationError, ValueError):
    """Temperature outside the validity range of the WLF shift"""


class UndefinedErrorNorm(SimulationError, ValueError):
    """Relative error requested against a zero reference field"""


class ConfigError(SimulationError):
    """Scenario configuration failed validation"""

    def __init__(self, violations: List[Tuple[str, str]]):
        self.violations = list(violations)
        lines = [f"{loc}: {msg}" if loc else msg for loc, msg in self.violations]
        super().__init__("invalid scenario configuration:\n  " + "\n  ".join(lines))


class SolverError(SimulationError):
    """Linear or nonlinear solve failed"""

    def __init__(self, message: str, condition_estimate: Optional[float] = None):
        self.condition_estimate = condition_estimate
        if condition_estimate is not None:
            message = f"{message} (condition estimate {condition_estimate:.3e})"
        super().__init__(message)


class StepFailure(SolverError):
    """Newton iteration did not converge within the allowed iterations"""

    def __init__(self, message: str, residual_history: Optional[List[float]] = None):
        self.residual_history = list(residual_history or [])
        super().__init__(message)
