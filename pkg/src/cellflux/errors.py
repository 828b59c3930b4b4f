"""Exception hierarchy shared by all modules."""


class CellFluxError(Exception):
    """Base class for package errors."""


class DomainError(CellFluxError, ValueError):
    """Inputs outside the domain of an operation."""


class InternalError(CellFluxError, RuntimeError):
    """A construction invariant was violated (e.g. a degenerate mesh)."""


class NumericalError(CellFluxError, ArithmeticError):
    """An iterative solve failed or a value is not representable.

    Parameters
    ----------
    message : str
    residual : float, optional
        Residual norm at the point of failure, if known.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class IntensityOverflow(NumericalError):
    """An intensity schedule exceeded the representable range."""

    def __init__(self, message: str = "intensity overflow", value: float | None = None):
        super().__init__(message)
        self.value = value


class ConfigError(CellFluxError, ValueError):
    """Malformed configuration. ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
