"""Single-step latent depth estimation: procedural data, latent codec, U-Net regressor, metrics."""

from .errors import (
    ConfigurationError,
    DegenerateError,
    DomainError,
    IntegrityError,
    LatentDepthError,
    NumericalError,
    ParseError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DegenerateError",
    "DomainError",
    "IntegrityError",
    "LatentDepthError",
    "NumericalError",
    "ParseError",
    "ShapeError",
    "__version__",
]
