"""Compressed sparse row matrices and nonsymmetric linear solvers.

The :class:`SparseMatrix` container owns the CSR arrays and enforces their
invariants.  Products are delegated to ``scipy.sparse`` whose CSR kernel
accumulates each row sequentially over the stored entries; since column
indices are kept sorted, the accumulation order is ascending column index
and results are bitwise reproducible.

Two solvers are offered:

* ``direct_lu``: SuperLU with partial pivoting (``scipy.sparse.linalg.splu``),
  factor once and reuse through :func:`factorize`.
* ``krylov_nonsymmetric``: restarted GMRES written here, with an optional
  right preconditioner.  Plain conjugate gradients would be wrong because
  the advection term makes the operator nonsymmetric.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConstructionError, ConvergenceError

__all__ = [
    "SolveMethod",
    "SolveSettings",
    "SparseMatrix",
    "LinearSolver",
    "build_sparse",
    "matvec",
    "solve_linear",
    "factorize",
    "gmres",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSR matrix.

    Invariants checked at construction: ``row_offsets`` has ``n_rows + 1``
    nondecreasing entries ending at ``nnz``; column indices are strictly
    increasing within each row and below ``n_cols``; no explicit zeros.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = _frozen(np.asarray(self.row_offsets, dtype=np.int64))
        ci = _frozen(np.asarray(self.col_indices, dtype=np.int64))
        va = _frozen(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)

        if self.n_rows < 0 or self.n_cols < 0:
            raise ConstructionError("matrix dimensions must be nonnegative")
        if ro.shape != (self.n_rows + 1,) or ro[0] != 0:
            raise ConstructionError("row_offsets must have n_rows+1 entries starting at 0")
        if np.any(np.diff(ro) < 0):
            raise ConstructionError("row_offsets must be nondecreasing")
        if ro[-1] != ci.size or ci.size != va.size:
            raise ConstructionError("row_offsets[-1] must equal the number of stored values")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ConstructionError("column index out of range")
            # strictly increasing inside each row: a non-increase is only
            # allowed where a new row starts
            dec = np.flatnonzero(np.diff(ci) <= 0) + 1
            starts = np.zeros(ci.size, dtype=bool)
            starts[ro[1:-1][ro[1:-1] < ci.size]] = True
            if dec.size and not np.all(starts[dec]):
                raise ConstructionError("column indices must be strictly increasing per row")
        if np.any(va == 0.0):
            raise ConstructionError("explicit zeros are not allowed in a finalized matrix")

    # -- conversions -------------------------------------------------------

    @classmethod
    def from_scipy(cls, A) -> "SparseMatrix":
        A = sp.csr_matrix(A, dtype=np.float64, copy=True)
        A.sum_duplicates()
        A.eliminate_zeros()
        A.sort_indices()
        return cls(A.shape[0], A.shape[1], A.indptr, A.indices, A.data)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Read-only scipy view used for products and factorizations."""
        A = sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.n_rows, self.n_cols),
        )
        A.has_sorted_indices = True
        return A

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    # -- small algebra -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def T(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr.T)

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def __matmul__(self, x):
        return matvec(self, x)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return SparseMatrix.from_scipy(self.csr + other.csr)

    def __sub__(self, other: "SparseMatrix") -> "SparseMatrix":
        return self + other.scale(-1.0)

    def __neg__(self) -> "SparseMatrix":
        return self.scale(-1.0)

    def scale(self, alpha: float) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr * float(alpha))

    def submatrix(self, rows, cols) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr[np.asarray(rows)][:, np.asarray(cols)])

    def __repr__(self) -> str:
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


def build_sparse(n_rows: int, n_cols: int, triplets: Iterable[tuple[int, int, float]]) -> SparseMatrix:
    """Build a CSR matrix from ``(row, col, value)`` triplets.

    Duplicate entries are summed, rows sorted by column, and entries that
    sum to exactly zero are dropped.
    """
    trip = list(triplets)
    if trip:
        rows, cols, vals = (np.asarray(c) for c in zip(*trip))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return build_sparse_arrays(n_rows, n_cols, rows, cols, vals)


def build_sparse_arrays(n_rows: int, n_cols: int, rows, cols, vals) -> SparseMatrix:
    """Array form of :func:`build_sparse` used by the assembly loops."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=np.float64).ravel()
    if n_rows < 0 or n_cols < 0:
        raise ConstructionError("matrix dimensions must be nonnegative")
    if not (rows.size == cols.size == vals.size):
        raise ConstructionError("triplet arrays must have equal length")
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise ConstructionError("triplet index out of range")
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)).tocsr()
    return SparseMatrix.from_scipy(A)


def matvec(A: SparseMatrix, x) -> np.ndarray:
    """Return ``A @ x`` (rows accumulated in ascending column order)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.n_cols:
        raise ValueError(f"dimension mismatch: matrix has {A.n_cols} columns, vector {x.shape[0]} entries")
    return A.csr @ x


class SolveMethod(str, enum.Enum):
    DIRECT_LU = "direct_lu"
    KRYLOV = "krylov_nonsymmetric"


@dataclass(frozen=True)
class SolveSettings:
    """Linear solver selection.

    ``restart_or_fill`` is the GMRES restart length for the Krylov path
    and the SuperLU fill factor for the direct path.
    """

    method: SolveMethod = SolveMethod.DIRECT_LU
    rel_tol: float = 1e-10
    max_iterations: int | None = None  # None -> 10 * n
    restart_or_fill: int = 50

    def __post_init__(self):
        object.__setattr__(self, "method", SolveMethod(self.method))
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.restart_or_fill < 1:
            raise ValueError("restart_or_fill must be at least 1")

    def iteration_cap(self, n: int) -> int:
        return self.max_iterations if self.max_iterations is not None else max(10 * n, 1)


def gmres(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    *,
    rel_tol: float = 1e-10,
    restart: int = 50,
    max_iterations: int = 1000,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Restarted, right-preconditioned GMRES.

    Stops when the true residual satisfies ``||b - A x|| <= rel_tol ||b||``.
    Returns ``(x, iterations)``; raises :class:`ConvergenceError` on
    breakdown without convergence or when ``max_iterations`` is exhausted.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    M = precond if precond is not None else (lambda v: v)
    target = rel_tol * bnorm
    history = []
    total = 0
    r = b - apply_A(x)
    beta = np.linalg.norm(r)
    history.append(beta / bnorm)
    while beta > target:
        if total >= max_iterations:
            raise ConvergenceError(
                f"GMRES reached {max_iterations} iterations", residual=beta / bnorm, history=history
            )
        m = min(restart, max_iterations - total, n)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k_used = 0
        breakdown = False
        for k in range(m):
            Z[k] = M(V[k])
            w = apply_A(Z[k])
            # modified Gram-Schmidt
            for i in range(k + 1):
                H[i, k] = w @ V[i]
                w = w - H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                breakdown = True
                break
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            hk1 = H[k + 1, k]
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            total += 1
            history.append(abs(g[k + 1]) / bnorm)
            if abs(g[k + 1]) <= target or hk1 == 0.0:
                if hk1 == 0.0:
                    breakdown = abs(g[k + 1]) > target
                break
            V[k + 1] = w / hk1
        if k_used:
            y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
            x = x + Z[:k_used].T @ y
        r = b - apply_A(x)
        beta = np.linalg.norm(r)
        if breakdown and beta > target:
            raise ConvergenceError("GMRES breakdown", residual=beta / bnorm, history=history)
    return x, total


@dataclass(eq=False)
class LinearSolver:
    """A matrix prepared for repeated solves (LU factors or Krylov setup)."""

    A: SparseMatrix
    settings: SolveSettings = field(default_factory=SolveSettings)
    precond: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.A.n_rows != self.A.n_cols:
            raise ValueError("solve requires a square matrix")
        self._lu = None
        if self.settings.method is SolveMethod.DIRECT_LU and self.A.n_rows:
            try:
                self._lu = spla.splu(
                    self.A.csr.tocsc(), permc_spec="COLAMD", options={"SymmetricMode": False}
                )
            except RuntimeError as exc:  # exactly singular
                raise ConvergenceError(f"LU factorization failed: {exc}") from exc

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        n = self.A.n_rows
        if b.shape != (n,):
            raise ValueError(f"dimension mismatch: expected rhs of length {n}, got {b.shape}")
        if n == 0:
            return np.zeros(0)
        s = self.settings
        bnorm = np.linalg.norm(b)
        if s.method is SolveMethod.DIRECT_LU:
            x = self._lu.solve(b)
            r = b - self.A.csr @ x
            # iterative refinement for mildly ill-conditioned systems
            for _ in range(3):
                if np.linalg.norm(r) <= s.rel_tol * bnorm:
                    break
                x = x + self._lu.solve(r)
                r = b - self.A.csr @ x
            res = np.linalg.norm(r)
            if not np.isfinite(res) or res > s.rel_tol * bnorm:
                with np.errstate(invalid="ignore"):
                    rel = res / bnorm if bnorm else res
                raise ConvergenceError("direct solve did not reach tolerance", residual=rel)
            return x
        x, _ = gmres(
            self.A.csr.__matmul__,
            b,
            rel_tol=s.rel_tol,
            restart=s.restart_or_fill,
            max_iterations=s.iteration_cap(n),
            precond=self.precond,
        )
        return x


def factorize(A: SparseMatrix, settings: SolveSettings | None = None, precond=None) -> LinearSolver:
    """Prepare ``A`` for repeated solves with the selected method."""
    return LinearSolver(A, settings or SolveSettings(), precond)


def solve_linear(A: SparseMatrix, b, settings: SolveSettings | None = None) -> np.ndarray:
    """Solve ``A x = b``; the result satisfies ``||Ax - b|| <= rel_tol ||b||``."""
    return factorize(A, settings).solve(b)
