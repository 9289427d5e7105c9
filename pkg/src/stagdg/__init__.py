"""Staggered space-time discontinuous Galerkin solver for the 3D
incompressible Navier-Stokes equations on unstructured tetrahedral meshes."""

from .basis import monomial_exponents, nodal_coeffs, taylor_eval, time_basis
from .meshing import (
    DualMesh,
    GeometryError,
    PairingError,
    PrimalMesh,
    TopologyError,
    build_connectivity,
    build_dual,
    cube_mesh,
    pair_periodic_faces,
)
from .quadrature import QuadratureRule, quad_rule

__all__ = [
    "DualMesh",
    "GeometryError",
    "PairingError",
    "PrimalMesh",
    "QuadratureRule",
    "TopologyError",
    "build_connectivity",
    "build_dual",
    "cube_mesh",
    "monomial_exponents",
    "nodal_coeffs",
    "pair_periodic_faces",
    "quad_rule",
    "taylor_eval",
    "time_basis",
]
