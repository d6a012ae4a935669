"""Numerical laboratory for Laplacians on domains with lattices of shrinking holes."""

from .errors import (
    ArgumentError,
    AssemblyError,
    GeometryError,
    MeshError,
    PerfhomError,
    ResourceError,
    SolverError,
    ValidationError,
)
from .geometry import (
    BCType,
    BoundaryKind,
    DomainSpec,
    PerforationSpec,
    hole_radius,
    lattice_centers,
    strange_term,
    surface_area_unit_ball,
)

__all__ = [
    "ArgumentError", "AssemblyError", "GeometryError", "MeshError", "PerfhomError", "ResourceError",
    "SolverError", "ValidationError", "BCType", "BoundaryKind", "DomainSpec", "PerforationSpec",
    "hole_radius", "lattice_centers", "strange_term", "surface_area_unit_ball",
]

__version__ = "0.1.0"
