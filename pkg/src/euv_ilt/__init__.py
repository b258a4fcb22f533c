"""Joint mask and optics-parameter optimization for EUV lithography at desk scale."""

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    GeometryError,
    LithoError,
    MetricError,
    NumericalAbort,
    ParameterError,
    TapeError,
)
from .field import (
    DEFAULT_GRID_PX,
    DEFAULT_PIXEL_SIZE_NM,
    EUV_WAVELENGTH_NM,
    Field2D,
    Kernel2D,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "GeometryError",
    "LithoError",
    "MetricError",
    "NumericalAbort",
    "ParameterError",
    "TapeError",
    "DEFAULT_GRID_PX",
    "DEFAULT_PIXEL_SIZE_NM",
    "EUV_WAVELENGTH_NM",
    "Field2D",
    "Kernel2D",
    "__version__",
]
