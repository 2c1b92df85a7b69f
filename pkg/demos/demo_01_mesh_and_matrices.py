"""
Meshes and finite element matrices
==================================

"""

import numpy as np
from spdefem import OperatorSpec, assemble_mass, assemble_stiffness, build_rectangle_mesh

# a 4 x 4 grid of squares, each cut along its rising diagonal
mesh = build_rectangle_mesh(1.0, 1.0, 4, 4)
print(mesh.n_nodes, "nodes,", mesh.n_triangles, "triangles, h =", mesh.h)

# the consistent mass matrix integrates constants exactly
M = assemble_mass(mesh)
one = np.ones(mesh.n_nodes)
print("area from M:", one @ (M @ one))

# diffusion plus a constant velocity gives a nonsymmetric stiffness matrix
K = assemble_stiffness(mesh, OperatorSpec(diffusion=0.1 * np.eye(2), advection=np.array([1.0, 0.0])))
Kd = K.to_dense()
print("nonzeros:", K.nnz, " asymmetry:", np.abs(Kd - Kd.T).max())

# rows of the Neumann Laplacian sum to zero
print("max row sum:", np.abs(assemble_stiffness(mesh, OperatorSpec()).to_dense().sum(axis=1)).max())
