"""Gaussian posteriors for small MLPs and their linear-model / GP views.

The package trains multilayer perceptrons, builds Laplace and variational
Gaussian posterior approximations over their weights, and converts those
posteriors into equivalent heteroscedastic linear basis-function models and
GP posteriors with tangent-kernel feature maps. On top of the conversion it
provides predictive uncertainty decomposition (aleatoric vs epistemic) and
GP-evidence hyperparameter sweeps, all driven by the ``d2g`` command line.
"""

from d2g.errors import (
    ConfigError,
    ConstantColumn,
    D2gError,
    DimensionMismatch,
    EmptyAfterFilter,
    HashMismatch,
    InvalidTarget,
    NonFiniteUpdate,
    NotPositiveDefinite,
    ParseError,
    SingularNoisePrecision,
)

__all__ = [
    "ConfigError",
    "ConstantColumn",
    "D2gError",
    "DimensionMismatch",
    "EmptyAfterFilter",
    "HashMismatch",
    "InvalidTarget",
    "NonFiniteUpdate",
    "NotPositiveDefinite",
    "ParseError",
    "SingularNoisePrecision",
]

__version__ = "0.1.0"
