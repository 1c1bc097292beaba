"""Adaptive multilevel stochastic Galerkin finite elements.

Solves the parametric diffusion problem -div(a(x,y) grad u) = f(x) on a
square domain, with an affine-in-parameters coefficient, by Galerkin
projection onto multilevel tensor-product spaces.  The energy error is
estimated with a two-part hierarchical estimator whose components steer the
adaptive enrichment (spatial mesh refinement per solution mode, or activation
of new polynomial-chaos modes).
"""

from . import adapt, chaos, cli, coeffs, estimator, fem, system
from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "adapt",
    "chaos",
    "cli",
    "coeffs",
    "estimator",
    "fem",
    "system",
    "KERNEL_BACKEND",
    "__version__",
]
