"""coneharm: weighted Bergman/Besov analysis on homogeneous cones and Siegel domains.

Numerical engine for cone arithmetic through triangular matrix patterns,
generalized power and gamma functions, Bergman-type kernels, invariant
lattices, sampling/atomic decomposition, and Bergman projection, with
independent Monte-Carlo and quadrature oracles for every closed form.
"""

from ._backend import backend_name
from .cones import (DIAGONAL, FULL, VINBERG, ConeDescriptor, TAlgebraPattern,
                    TriangularElement, build_cone, cone_from_json,
                    cone_inverse, cone_to_json, diagonal_cone, dual_factor,
                    factor, full_cone, invariant_density, power_function,
                    power_function_complex, power_function_dual, vinberg_cone)

__all__ = [
    "backend_name",
    "build_cone", "diagonal_cone", "full_cone", "vinberg_cone",
    "ConeDescriptor", "TAlgebraPattern", "TriangularElement",
    "factor", "dual_factor", "power_function", "power_function_dual",
    "power_function_complex", "invariant_density", "cone_inverse",
    "cone_to_json", "cone_from_json",
    "DIAGONAL", "FULL", "VINBERG",
]

__version__ = "0.1.0"
