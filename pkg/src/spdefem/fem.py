"""P1 finite element assembly for the advection-diffusion operator.

The bilinear form is

    a(u, v) = int D grad u . grad v + (q . grad u) v dx + alpha0 int_{boundary} u v ds

with the Robin term only on the non-Dirichlet part of the boundary.  An
optional shift ``c0`` adds ``c0 <u, v>`` so that the form becomes coercive;
the drift is compensated by the same amount (see :mod:`spdefem.drift`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError
from .linalg import SparseMatrix, build_sparse_arrays
from .mesh import BoundarySpec, Mesh, Tag, boundary_edges

__all__ = [
    "OperatorSpec",
    "DiscreteSystem",
    "barycentric_gradients",
    "assemble_mass",
    "assemble_stiffness",
    "apply_dirichlet",
    "l2_norm",
    "coercivity_diagnostic",
    "round_up_one_digit",
    "interpolate",
]

TensorField = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients of the elliptic operator.

    ``diffusion`` is a 2x2 array or ``f(x, y) -> (..., 2, 2)``;
    ``advection`` is a 2-vector or ``f(x, y) -> (..., 2)``.  Callables are
    sampled at triangle centroids.
    """

    diffusion: TensorField = field(default_factory=lambda: np.eye(2))
    advection: TensorField | None = None
    robin_alpha0: float = 0.0
    garding_shift: float = 0.0

    def diffusion_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if callable(self.diffusion):
            D = np.asarray(self.diffusion(x, y), dtype=float)
        else:
            D = np.asarray(self.diffusion, dtype=float)
        return np.broadcast_to(D, x.shape + (2, 2))

    def advection_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.advection is None:
            return np.zeros(x.shape + (2,))
        if callable(self.advection):
            q = np.asarray(self.advection(x, y), dtype=float)
        else:
            q = np.asarray(self.advection, dtype=float)
        return np.broadcast_to(q, x.shape + (2,))


def barycentric_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle areas ``(T,)`` and gradients of the hat functions ``(T, 3, 2)``."""
    p = mesh.nodes[mesh.triangles]
    area = mesh.signed_areas()
    if np.any(area <= 0.0):
        bad = int(np.flatnonzero(area <= 0.0)[0])
        raise AssemblyError(f"triangle {bad} is degenerate or clockwise (area {area[bad]:g})")
    x, y = p[..., 0], p[..., 1]
    # grad lambda_i = (y_{i+1} - y_{i+2}, x_{i+2} - x_{i+1}) / (2|T|)
    gx = np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)
    gy = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
    G = np.stack([gx, gy], axis=-1) / (2.0 * area)[:, None, None]
    return area, G


def _scatter(mesh: Mesh, local: np.ndarray) -> SparseMatrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1)
    cols = np.tile(tri, (1, 3))
    n = mesh.n_nodes
    return build_sparse_arrays(n, n, rows, cols, local.reshape(len(tri), 9))


def assemble_mass(mesh: Mesh) -> SparseMatrix:
    """Consistent P1 mass matrix (exact integration of hat-function products)."""
    area, _ = barycentric_gradients(mesh)
    return _scatter(mesh, area[:, None, None] * _LOCAL_MASS)


def _robin_matrix(mesh: Mesh, alpha0: float, exclude: tuple[str, ...]) -> sp.csr_matrix:
    segs = boundary_edges(mesh, exclude=exclude)
    n = mesh.n_nodes
    if alpha0 == 0.0 or len(segs) == 0:
        return sp.csr_matrix((n, n))
    length = np.linalg.norm(mesh.nodes[segs[:, 1]] - mesh.nodes[segs[:, 0]], axis=1)
    local = alpha0 * length[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)
    rows = np.repeat(segs, 2, axis=1).ravel()
    cols = np.tile(segs, (1, 2)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(mesh: Mesh, op: OperatorSpec, robin_exclude: tuple[str, ...] = ()) -> SparseMatrix:
    """Stiffness matrix ``K[i, j] = a(phi_j, phi_i) + c0 <phi_j, phi_i>``.

    Diffusion and advection use one-point (centroid) quadrature, exact for
    constant coefficients.  The Robin term is integrated exactly on every
    boundary side not listed in ``robin_exclude`` (the Dirichlet sides).
    """
    area, G = barycentric_gradients(mesh)
    p = mesh.nodes[mesh.triangles]
    cx, cy = p[..., 0].mean(axis=1), p[..., 1].mean(axis=1)

    D = op.diffusion_at(cx, cy)
    lam = np.linalg.eigvalsh(0.5 * (D + np.swapaxes(D, -1, -2)))
    if not np.allclose(D, np.swapaxes(D, -1, -2), rtol=1e-12, atol=1e-14) or np.any(lam[..., 0] <= 0.0):
        bad = int(np.flatnonzero(lam[..., 0] <= 0.0)[0]) if np.any(lam[..., 0] <= 0.0) else 0
        raise AssemblyError(
            f"diffusion tensor is not symmetric positive definite at the centroid of triangle {bad}"
        )
    q = op.advection_at(cx, cy)

    # a(phi_j, phi_i): row i (test), column j (trial)
    local = area[:, None, None] * np.einsum("tjk,tkl,til->tij", G, D, G)
    local += (area / 3.0)[:, None, None] * np.einsum("tk,tjk->tj", q, G)[:, None, :]
    if op.garding_shift:
        local += op.garding_shift * area[:, None, None] * _LOCAL_MASS
    K = _scatter(mesh, local).csr
    if op.robin_alpha0:
        K = K + _robin_matrix(mesh, op.robin_alpha0, robin_exclude)
    return SparseMatrix.from_scipy(K)


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """Assembled matrices with Dirichlet nodes eliminated by lifting.

    The free-node blocks ``M_ff``/``K_ff`` carry the unknowns; the coupling
    blocks applied to the boundary data give ``lift_mass = M_fd g`` and
    ``lift_stiff = K_fd g``.
    """

    M: SparseMatrix
    K: SparseMatrix
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    free_nodes: np.ndarray
    M_ff: SparseMatrix
    K_ff: SparseMatrix
    M_fd: SparseMatrix
    K_fd: SparseMatrix
    garding_shift: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.M.n_rows

    @property
    def n_free(self) -> int:
        return self.free_nodes.size

    @property
    def boundary_vector(self) -> np.ndarray:
        """Full-length vector holding the Dirichlet data and zeros elsewhere."""
        g = np.zeros(self.n_nodes)
        g[self.dirichlet_nodes] = self.dirichlet_values
        return g

    @property
    def lift_mass(self) -> np.ndarray:
        return self.M_fd @ self.dirichlet_values

    @property
    def lift_stiff(self) -> np.ndarray:
        return self.K_fd @ self.dirichlet_values

    def expand(self, free_values) -> np.ndarray:
        """Full nodal field from free-node values, Dirichlet nodes pinned."""
        u = np.empty(self.n_nodes)
        u[self.free_nodes] = free_values
        u[self.dirichlet_nodes] = self.dirichlet_values
        return u

    def pin(self, u) -> np.ndarray:
        u = np.array(u, dtype=float)
        u[self.dirichlet_nodes] = self.dirichlet_values
        return u


def apply_dirichlet(M: SparseMatrix, K: SparseMatrix, boundary: BoundarySpec, mesh: Mesh,
                    garding_shift: float = 0.0) -> DiscreteSystem:
    """Split the system into free and Dirichlet blocks using the mesh tags."""
    tags = mesh.boundary_tag
    dir_nodes = np.flatnonzero(tags == Tag.DIRICHLET)
    free = np.flatnonzero(tags != Tag.DIRICHLET)
    g = np.full(dir_nodes.size, float(boundary.dirichlet_value))
    for a in (dir_nodes, free, g):
        a.flags.writeable = False
    return DiscreteSystem(
        M=M,
        K=K,
        dirichlet_nodes=dir_nodes,
        dirichlet_values=g,
        free_nodes=free,
        M_ff=M.submatrix(free, free),
        K_ff=K.submatrix(free, free),
        M_fd=M.submatrix(free, dir_nodes),
        K_fd=K.submatrix(free, dir_nodes),
        garding_shift=garding_shift,
    )


def l2_norm(M: SparseMatrix, u) -> float:
    """Discrete L2 norm ``sqrt(u^T M u)`` of a nodal field."""
    u = np.asarray(u, dtype=float)
    return math.sqrt(max(float(u @ (M @ u)), 0.0))


def interpolate(mesh: Mesh, f) -> np.ndarray:
    """Nodal interpolant of ``f(x, y)`` (scalars are broadcast)."""
    if callable(f):
        return np.asarray(f(mesh.x, mesh.y), dtype=float) * np.ones(mesh.n_nodes)
    return np.full(mesh.n_nodes, float(f))


def _is_positive_definite(A: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return True


def coercivity_diagnostic(system: DiscreteSystem, *, tol: float = 1e-10, max_iter: int = 500,
                          K: SparseMatrix | None = None) -> tuple[float, float]:
    """Smallest eigenvalue of the symmetric part of ``K_ff`` in the M-inner product.

    Finds a shift ``sigma`` below the spectrum (dense Cholesky test), then
    runs inverse power iteration on ``(K_sym - sigma M)^{-1} M``, whose
    dominant eigenvector belongs to the smallest eigenvalue.  Returns
    ``(lambda_min, required_c0)`` with ``required_c0 = max(0, -lambda_min)``.
    ``K`` overrides the system's free-node stiffness block.  Returns NaNs
    when the iteration does not settle.
    """
    Kf = (K if K is not None else system.K_ff).to_dense()
    Mf = system.M_ff.to_dense()
    n = Mf.shape[0]
    if n == 0:
        return float("nan"), float("nan")
    Ks = 0.5 * (Kf + Kf.T)

    scale = max(np.abs(np.diag(Ks) / np.diag(Mf)).max(), 1.0)
    # doubling search: the first admissible shift is within a factor 2 of a
    # negative lambda_min, which keeps the inverse iteration contraction good
    sigma = 0.0
    while not _is_positive_definite(Ks - sigma * Mf):
        sigma = -1e-6 * scale if sigma == 0.0 else 2.0 * sigma
        if sigma < -1e6 * scale:
            return float("nan"), float("nan")
    sigma -= 1e-8 * scale
    L = np.linalg.cholesky(Ks - sigma * Mf)

    def apply_inverse(v):
        return np.linalg.solve(L.T, np.linalg.solve(L, v))

    rng = np.random.default_rng(0)
    v = rng.standard_normal(n) + 1.0
    v /= math.sqrt(v @ Mf @ v)
    lam = float("nan")
    for _ in range(max_iter):
        w = apply_inverse(Mf @ v)
        w /= math.sqrt(w @ Mf @ w)
        new = float(w @ Ks @ w)
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam, v = new, w
    else:
        return float("nan"), float("nan")
    return lam, max(0.0, -lam)


def round_up_one_digit(x: float) -> float:
    """Round a nonnegative number up to one significant digit (0.0234 -> 0.03)."""
    if not x > 0:
        return 0.0
    e = math.floor(math.log10(x))
    m = math.ceil(x / 10.0**e - 1e-12)
    return float(m * 10.0**e)
