"""Optimal distribution of a thin insulating layer on the boundary of a domain.

Finite element solvers for the energy and first-eigenvalue insulation
problems, closed-form reference values, symmetry diagnostics on the disk and
a command-line front end (``insulopt``).
"""

from __future__ import annotations

__version__ = "0.1.0"

from .fem import AssembledOperators, ScalarField, assemble, boundary_integral
from .mesh import Mesh, disk, generate_mesh, interval, load_mesh, rectangle, save_mesh, two_disks

__all__ = [
    "__version__",
    "Mesh",
    "AssembledOperators",
    "ScalarField",
    "assemble",
    "boundary_integral",
    "generate_mesh",
    "interval",
    "disk",
    "two_disks",
    "rectangle",
    "load_mesh",
    "save_mesh",
]
