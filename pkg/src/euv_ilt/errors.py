"""Exception taxonomy shared across the package.

Every error raised on a contract violation derives from LithoError so
callers (and the CLI) can map failures onto exit codes without matching
on message strings.
"""


class LithoError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(LithoError):
    """Shape or size constraint violated (kernel larger than field, ...)."""


class ParameterError(LithoError):
    """Scalar parameter outside its legal domain (sigma <= 0, NaN raw, ...)."""


class ContractError(LithoError):
    """API precondition violated (non-scalar loss, non-binary target, ...)."""


class GeometryError(LithoError):
    """Pattern geometry cannot be realized (empty validity range, ...)."""


class MetricError(LithoError):
    """Metric undefined for the given inputs (target has no edges, ...)."""


class TapeError(LithoError):
    """Autodiff tape misuse (reuse after backward, unknown op kind, ...)."""


class ConfigError(LithoError):
    """Run configuration invalid (unknown kind, bad mode, ...)."""


class NumericalAbort(LithoError):
    """Training hit a non-finite value; carries the offending parameter name."""

    def __init__(self, message: str, param: str = ""):
        super().__init__(f"{message} ({param})" if param else message)
        self.param = param
