"""Mapping content of Lipschitz maps sampled on dyadic lattices.

The package estimates the (n, m)-mapping content of maps from [0,1]^(n+m)
into metric spaces, fits metric derivatives on dyadic cubes, decomposes
the domain into straightened pieces and checks Hard Sard certificates.
"""

from .errors import (ArgumentError, DepthError, FailureReport, MapContentError,
                     NotBiLipschitzError, ResolutionError, StateError)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "DepthError",
    "FailureReport",
    "MapContentError",
    "NotBiLipschitzError",
    "ResolutionError",
    "StateError",
    "__version__",
]
