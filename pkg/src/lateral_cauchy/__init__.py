"""Numerical laboratory for lateral Cauchy problems of integro-differential parabolic equations."""

__version__ = "0.1.0"

from .errors import (ConfigError, DomainError, PicardDivergenceError, PreconditionError,  # noqa: E402
                     ShapeError, SingularWeightError)

__all__ = ["__version__", "ConfigError", "DomainError", "PicardDivergenceError",
           "PreconditionError", "ShapeError", "SingularWeightError"]
