"""Exception hierarchy shared across the package."""


class GeometryError(ValueError):
    """Invalid or degenerate boundary geometry."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class SolverError(RuntimeError):
    """An iterative or direct solve failed to reach its tolerance."""


class CompatibilityError(ValueError):
    """Boundary data carries net flux through a closed boundary."""

    def __init__(self, flux: float):
        super().__init__(f"boundary data has net flux {flux:.3e}; expected zero")
        self.flux = flux


class DegenerateFlowError(ArithmeticError):
    """Slip ratio denominator vanishes (data misaligned with the representor)."""


class DatasetError(IOError):
    """Malformed, truncated or corrupted dataset/model file."""


class NumericalError(RuntimeError):
    """Non-finite values appeared during a computation (e.g. NaN loss)."""


class DivergenceError(RuntimeError):
    """Fixed-point iteration is diverging."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class MetricError(ArithmeticError):
    """An error norm is undefined (e.g. the reference field vanishes)."""


class NearBoundaryWarning(UserWarning):
    """Evaluation point closer to the boundary than the quadrature resolves."""


__all__ = [
    "GeometryError",
    "ConfigError",
    "SolverError",
    "CompatibilityError",
    "DegenerateFlowError",
    "DatasetError",
    "NumericalError",
    "DivergenceError",
    "MetricError",
    "NearBoundaryWarning",
]
