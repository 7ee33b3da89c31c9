"""Exception hierarchy."""


class SWEError(Exception):
    """Base class for solver errors."""


class MeshError(SWEError):
    """Structural or size problem in a mesh."""


class MeshFormatError(SWEError):
    """Malformed SWEMESH input; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class AdmissibilityError(SWEError):
    """A state with negative depth reached a flux kernel."""


class PositivityError(SWEError):
    """Depth went negative beyond round-off tolerance."""

    def __init__(self, message: str, cell: int = -1):
        super().__init__(message)
        self.cell = cell


class BlowupError(SWEError):
    """Non-finite values appeared in the state."""

    def __init__(self, message: str, step: int = -1, cell: int = -1, dt: float = float("nan")):
        super().__init__(message)
        self.step = step
        self.cell = cell
        self.dt = dt


class ConfigError(SWEError):
    """Invalid run configuration."""


class CaseError(SWEError):
    """Inconsistent case definition."""


class OracleError(SWEError):
    """An analytic reference solution failed to evaluate."""
