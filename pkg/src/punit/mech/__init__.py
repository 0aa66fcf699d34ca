"""Finite elements, periodic homogenization, density laws and topology optimization."""

from .fem import BaseMaterial, StructuredHexMesh, element_stiffness, fe_solve, isotropic_stiffness
from .gibson import GibsonAshbyCurve, fit_curves, gibson_ashby_fit
from .homogenize import HomogenizedTensor, build_density_curves, homogenize
from .topopt import TopOptConfig, TopOptResult, standard_cases, topopt

__all__ = [
    "BaseMaterial",
    "StructuredHexMesh",
    "element_stiffness",
    "fe_solve",
    "isotropic_stiffness",
    "GibsonAshbyCurve",
    "fit_curves",
    "gibson_ashby_fit",
    "HomogenizedTensor",
    "build_density_curves",
    "homogenize",
    "TopOptConfig",
    "TopOptResult",
    "standard_cases",
    "topopt",
]
