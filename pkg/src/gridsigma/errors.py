"""Shared exception types."""


class GridSigmaError(Exception):
    """Base class for all domain errors raised by this package."""


class CaseFormatError(GridSigmaError):
    """Malformed network case text; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PowerFlowError(GridSigmaError):
    """Power-flow solve failed (non-convergence or singular Jacobian)."""


class DatasetError(GridSigmaError):
    """Dataset construction or (de)serialization failed."""


class PromptError(GridSigmaError):
    """Prompt rendering or example selection failed."""


class AgentError(GridSigmaError):
    """Agent execution failed in a way that cannot become an invalid verdict."""


class DetectorError(GridSigmaError):
    """Detector training, calibration, or inference failed."""
