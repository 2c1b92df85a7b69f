"""
Sampling the Q-Wiener noise
===========================

"""

import numpy as np
from spdefem import NodalNoise, build_rectangle_mesh, build_spectrum, sample_path

spec = build_spectrum(beta=2.0, delta=0.001, N1=64, N2=64)
print("sum of q:", spec.q.sum(), " trace check:", spec.trace_check)

# one path on a fine grid; each step is regenerated from (seed, sample, step) alone
path = sample_path(spec, n_fine_steps=64, dt_fine=1 / 64, master_seed=0, sample_index=0)

# coarse increments are sums of fine ones, so both grids see the same Brownian path
coarse = path.aggregated(8)
print("telescoping exact:", np.array_equal(coarse.sum(axis=0), path.increments.sum(axis=0)))

# nodal values: the variance at a node over many independent steps matches dt sum q e_i^2 e_j^2
mesh = build_rectangle_mesh(1.0, 1.0, 16, 16)
table = NodalNoise(spec, mesh)
many = sample_path(spec, 2000, 1 / 64, master_seed=1, sample_index=0)
centre = mesh.node_index(8, 8)
values = np.array([table(B)[centre] for B in many.increments])
print("variance at the centre:", values.var(), " predicted:", table.variance(1 / 64)[centre])
