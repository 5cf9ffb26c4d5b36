"""Heat kernels, Cauchy problems and Markov processes for elliptic quadratic forms on Q_p^4."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigInvalid,
    DomainViolation,
    HypothesisViolation,
    PadicHeatError,
    PreconditionError,
)
from .kernel import KernelParams, heat_kernel_series, kernel_mass  # noqa: E402
from .padic import Ball, PAdicPoint, PAdicScalar, parse_point, parse_scalar  # noqa: E402
from .qform import QFormPair, Side  # noqa: E402

__all__ = [
    "Ball",
    "ConfigInvalid",
    "DomainViolation",
    "HypothesisViolation",
    "KernelParams",
    "PAdicPoint",
    "PAdicScalar",
    "PadicHeatError",
    "PreconditionError",
    "QFormPair",
    "Side",
    "heat_kernel_series",
    "kernel_mass",
    "parse_point",
    "parse_scalar",
]
