"""Meshing, finite-element kernels and sparse linear algebra shared by the 2D solvers."""

from tubenet.femcore.elements import gauss1d, p1_basis, p1_grads, p2_basis, p2_grads, tri_quadrature
from tubenet.femcore.mesh import Mesh, MeshBuilder, load_mesh, save_mesh
from tubenet.femcore.fields import Field, n_dofs
from tubenet.femcore.assembly import (
    SparseSystem,
    assemble,
    boundary_load_vector,
    boundary_mass_matrix,
    convection_matrix,
    load_vector,
    mass_matrix,
    stiffness_matrix,
)
from tubenet.femcore.solve import solve_sparse

__all__ = [
    "Mesh",
    "MeshBuilder",
    "Field",
    "SparseSystem",
    "assemble",
    "boundary_load_vector",
    "boundary_mass_matrix",
    "convection_matrix",
    "gauss1d",
    "load_mesh",
    "load_vector",
    "mass_matrix",
    "n_dofs",
    "p1_basis",
    "p1_grads",
    "p2_basis",
    "p2_grads",
    "save_mesh",
    "solve_sparse",
    "stiffness_matrix",
    "tri_quadrature",
]
