"""Free boundary minimal surfaces from Steklov-Neumann eigenvalue problems on six-hole spheres.

Modules: ``moduli`` (moduli points and planar models), ``harmonic`` (mixed
boundary value solver), ``steklov`` (DtN operators and sector spectra),
``prism`` (surfaces in rectangular prisms), ``ballprod`` (surfaces in
products of three balls), ``surface`` (meshing and export), ``cli``.
"""
from . import errors
from .errors import FBSurfError, SolverError, ValidationError
from .moduli import ModuliPoint, build_planar_model, validate
from .harmonic import BasisSpec, solve_mixed
from .steklov import BoundaryMetric, dtn_matrix, sn_eigen
from .prism import PrismConfig, assemble_surface, energy, energy_gradient, find_critical_point
from .ballprod import (assemble_product_surface, conformal_max_energy, maximize_over_moduli,
                       minimize_constrained)

__all__ = [
    "errors", "FBSurfError", "SolverError", "ValidationError",
    "ModuliPoint", "build_planar_model", "validate", "BasisSpec", "solve_mixed",
    "BoundaryMetric", "dtn_matrix", "sn_eigen",
    "PrismConfig", "assemble_surface", "energy", "energy_gradient", "find_critical_point",
    "assemble_product_surface", "conformal_max_energy", "maximize_over_moduli",
    "minimize_constrained",
]
__version__ = "0.1.0"
