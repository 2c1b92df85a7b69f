"""Truncated Karhunen-Loeve sampling of a Q-Wiener process on a rectangle.

The covariance shares the eigenfunctions of the Neumann Laplacian,

    e_0(x) = sqrt(1/L),    e_i(x) = sqrt(2/L) cos(i pi x / L),

with eigenvalues ``q[i, j] = (i^2 + j^2)^-(beta + delta)`` and ``q[0, 0] = 0``.

Random numbers
--------------
Each standard normal is a pure function of
``(master_seed, sample_index, step, mode)``: a Philox-4x64 block cipher
keyed by ``master_seed`` is evaluated at counter
``(mode_block, step, sample_index, 0)``, the 64-bit output is mapped to the
open unit interval as ``((r >> 11) + 0.5) / 2**53`` and transformed with the
inverse normal CDF.  Any step of any sample can therefore be regenerated
alone and in any order.

Fine increments are rounded to multiples of ``2**-40``.  Sums of such
values below ``2**12`` in magnitude are exact in binary64, so aggregated
coarse increments telescope bitwise whatever the summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError
from .mesh import Mesh

__all__ = [
    "NoiseSpec",
    "BrownianPath",
    "NodalNoise",
    "build_spectrum",
    "eigenfunctions_1d",
    "standard_normals",
    "sample_path",
    "nodal_increment",
]

_MASK64 = (1 << 64) - 1
QUANTUM = 2.0**-40


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    beta: float
    delta: float
    N1: int
    N2: int
    L1: float
    L2: float
    q: np.ndarray
    trace_check: float

    @property
    def sqrt_q(self) -> np.ndarray:
        return np.sqrt(self.q)

    @property
    def n_modes(self) -> int:
        return (self.N1 + 1) * (self.N2 + 1)


def build_spectrum(beta: float, delta: float, N1: int, N2: int, L1: float = 1.0, L2: float = 1.0) -> NoiseSpec:
    """Power-law spectrum on the retained modes ``0..N1`` x ``0..N2``.

    ``trace_check`` is ``sum lambda_ij^(beta-1) q_ij`` with the Neumann
    eigenvalues ``lambda_ij = (i pi/L1)^2 + (j pi/L2)^2``; it stays bounded
    under refinement of the truncation when the noise is regular enough.
    """
    if not beta > 0:
        raise ConfigError("beta must be positive")
    if not delta > 0:
        raise ConfigError("delta must be positive")
    if N1 < 1 or N2 < 1:
        raise ConfigError("truncation counts must be >= 1")
    i = np.arange(N1 + 1, dtype=float)[:, None]
    j = np.arange(N2 + 1, dtype=float)[None, :]
    r2 = i**2 + j**2
    with np.errstate(divide="ignore"):
        q = np.where(r2 > 0, r2 ** (-(beta + delta)), 0.0)
    lam = (i * math.pi / L1) ** 2 + (j * math.pi / L2) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        weighted = np.where(q > 0, lam ** (beta - 1.0) * q, 0.0)
    q.flags.writeable = False
    return NoiseSpec(float(beta), float(delta), int(N1), int(N2), float(L1), float(L2), q, float(weighted.sum()))


def eigenfunctions_1d(n: int, L: float, coords) -> np.ndarray:
    """Table ``E[k, i] = e_i(coords[k])`` for ``i = 0..n``."""
    coords = np.asarray(coords, dtype=float)
    i = np.arange(n + 1)
    E = math.sqrt(2.0 / L) * np.cos(np.outer(coords, i) * (math.pi / L))
    E[:, 0] = math.sqrt(1.0 / L)
    return E


def standard_normals(master_seed: int, sample_index: int, step: int, count: int) -> np.ndarray:
    """The ``count`` standard normals of one (sample, step) stream, in mode order."""
    key = [master_seed & _MASK64, 0]
    bg = np.random.Philox(counter=[0, step & _MASK64, sample_index & _MASK64, 0], key=key)
    raw = bg.random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Per-mode Brownian increments on the finest time grid.

    ``increments[m, i, j]`` is ``beta_ij(t_{m+1}) - beta_ij(t_m)``, normal
    with variance ``dt_fine``.  Coarser grids are served only by summing
    consecutive fine increments.
    """

    master_seed: int
    sample_index: int
    n_fine_steps: int
    dt_fine: float
    increments: np.ndarray

    def aggregated(self, aggregation: int) -> np.ndarray:
        """Increments summed over blocks of ``aggregation`` fine steps."""
        if aggregation < 1 or self.n_fine_steps % aggregation:
            raise ConfigError(
                f"aggregation {aggregation} does not divide {self.n_fine_steps} fine steps"
            )
        if aggregation == 1:
            return self.increments
        s = self.increments.shape
        return self.increments.reshape(s[0] // aggregation, aggregation, *s[1:]).sum(axis=1)


def sample_path(spec: NoiseSpec, n_fine_steps: int, dt_fine: float, master_seed: int,
                sample_index: int) -> BrownianPath:
    """Draw the increment tableau of one sample path."""
    if n_fine_steps < 1:
        raise ConfigError("n_fine_steps must be >= 1")
    if not dt_fine > 0:
        raise ConfigError("dt_fine must be positive")
    shape = (spec.N1 + 1, spec.N2 + 1)
    scale = math.sqrt(dt_fine)
    inc = np.empty((n_fine_steps, *shape))
    for m in range(n_fine_steps):
        inc[m] = scale * standard_normals(master_seed, sample_index, m, spec.n_modes).reshape(shape)
    inc = np.round(inc / QUANTUM) * QUANTUM
    # every subset sum of a mode is bounded by its absolute sum; below 2**12 all are exact
    if np.abs(inc).sum(axis=0).max() >= 2.0**12:
        raise ConfigError("path too long for exact increment aggregation")
    inc.flags.writeable = False
    return BrownianPath(int(master_seed), int(sample_index), int(n_fine_steps), float(dt_fine), inc)


class NodalNoise:
    """Maps modal increments to nodal values on one mesh.

    The node-by-mode table factorizes as ``e_i(x) e_j(y)``, so it is stored
    as one table per axis and applied as ``Ey @ (sqrt(q) * B).T @ Ex.T``.
    """

    def __init__(self, spec: NoiseSpec, mesh: Mesh):
        if (spec.L1, spec.L2) != (mesh.L1, mesh.L2):
            raise ConfigError("noise spectrum and mesh cover different rectangles")
        self.spec = spec
        self.mesh = mesh
        self.Ex = eigenfunctions_1d(spec.N1, spec.L1, mesh.grid_x)  # (nx+1, N1+1)
        self.Ey = eigenfunctions_1d(spec.N2, spec.L2, mesh.grid_y)  # (ny+1, N2+1)
        self._sqrt_q = spec.sqrt_q

    def __call__(self, B: np.ndarray) -> np.ndarray:
        """Nodal field for one modal increment array ``B[i, j]``."""
        C = self._sqrt_q * B
        return (self.Ey @ C.T @ self.Ex.T).ravel()

    def variance(self, dt: float) -> np.ndarray:
        """Exact nodal variance ``dt sum q_ij (e_i(x) e_j(y))^2``."""
        return dt * ((self.Ey**2) @ self.spec.q.T @ (self.Ex**2).T).ravel()


def nodal_increment(spec: NoiseSpec, path: BrownianPath, coarse_step: int, aggregation: int,
                    mesh: Mesh, table: NodalNoise | None = None) -> np.ndarray:
    """Nodal noise increment of coarse step ``coarse_step``.

    The modal increments of ``aggregation`` consecutive fine steps are
    summed first and then mapped to the nodes.
    """
    if aggregation < 1 or path.n_fine_steps % aggregation:
        raise ConfigError(f"aggregation {aggregation} does not divide {path.n_fine_steps} fine steps")
    start = coarse_step * aggregation
    if coarse_step < 0 or start + aggregation > path.n_fine_steps:
        raise ConfigError(f"coarse step {coarse_step} is outside the path")
    B = path.increments[start:start + aggregation].sum(axis=0)
    table = table if table is not None else NodalNoise(spec, mesh)
    return table(B)
