"""Backward Euler time stepping of the spatially discrete system.

On the free nodes the fully implicit step solves

    (M + dt K) y - dt M phi(y) = M (x + zeta) + lifting

by Newton's method, and the semi-implicit step solves the linear system

    (M + dt K) y = M (x + dt phi(x) + zeta) + lifting.

Dirichlet nodes are pinned before and after every step; the noise at
Dirichlet nodes is discarded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .drift import DriftPolynomial, eval_nemytskii, one_sided_constant_estimate
from .errors import ConfigError, ConvergenceError, DivergenceError, NonFiniteError, StepFailure
from .fem import DiscreteSystem
from .linalg import SolveMethod, SolveSettings, SparseMatrix, factorize, gmres
from .noise import BrownianPath, NodalNoise, NoiseSpec

__all__ = [
    "Scheme",
    "Jacobian",
    "StepperConfig",
    "PathSolution",
    "TimeStepper",
    "backward_euler_step",
    "semi_implicit_step",
    "solve_path",
    "drift_one_sided_constant",
]


class Scheme(str, enum.Enum):
    IMPLICIT = "implicit"
    SEMI_IMPLICIT = "semi_implicit"


class Jacobian(str, enum.Enum):
    """How Newton solves with ``J = M + dt K - dt M diag(phi'(y))``.

    ``direct``: assemble and LU-factorize J at every iteration.
    ``krylov``: matrix-free GMRES preconditioned by the frozen LU of ``M + dt K``.
    """

    DIRECT = "direct"
    KRYLOV = "krylov"


@dataclass(frozen=True)
class StepperConfig:
    scheme: Scheme = Scheme.IMPLICIT
    dt: float = 1.0 / 64
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    solve: SolveSettings = field(default_factory=SolveSettings)
    jacobian: Jacobian = Jacobian.KRYLOV

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "jacobian", Jacobian(self.jacobian))
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.newton_tol > 0:
            raise ConfigError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ConfigError("newton_max_iter must be >= 1")

    def check_well_posed(self, L0: float) -> None:
        """Reject ``dt * L0 >= 1``, where the implicit equation may lose uniqueness."""
        if self.dt * L0 >= 1.0:
            raise ConfigError(
                f"dt * L0 = {self.dt:g} * {L0:g} = {self.dt * L0:g} must be < 1 "
                "for a well-posed implicit step"
            )


def drift_one_sided_constant(drift: DriftPolynomial) -> float:
    """One-sided Lipschitz constant of the (compensated) drift, exact for degree <= 1."""
    c = drift.coefficients
    if len(c) <= 2:
        slope = c[1] if len(c) == 2 else 0.0
        return slope + drift.garding_compensation
    return one_sided_constant_estimate(drift, trials=10_000, seed=0)


@dataclass
class PathSolution:
    terminal: np.ndarray
    step_count: int
    newton_iterations_total: int
    max_abs: float
    max_norm: float
    max_newton_iterations: int = 0


class TimeStepper:
    """Advances one discrete system with a fixed step and scheme.

    The matrix ``M_ff + dt K_ff`` is factorized once at construction and
    reused for every step and sample.
    """

    def __init__(self, system: DiscreteSystem, drift: DriftPolynomial, cfg: StepperConfig,
                 check: bool = True):
        if check:
            cfg.check_well_posed(drift_one_sided_constant(drift))
        self.system = system
        self.drift = drift
        self.cfg = cfg
        dt = cfg.dt
        self._M = system.M_ff.csr
        A0 = SparseMatrix.from_scipy(system.M_ff.csr + dt * system.K_ff.csr)
        self.A0 = A0
        self._A0 = A0.csr
        self._lin = factorize(A0, cfg.solve)
        self._dtM = (dt * system.M_ff.csr).tocsr()
        if cfg.jacobian is Jacobian.KRYLOV:
            # frozen resolvent LU as preconditioner for the Newton systems
            lu = self._lin if cfg.solve.method is SolveMethod.DIRECT_LU else factorize(A0)
            self._precond = lu._lu.solve
        else:
            self._precond = None
        g = system.dirichlet_values
        self._const = -dt * system.lift_stiff
        if g.size and not drift.is_zero:
            self._const = self._const + dt * (system.M_fd @ drift(g))
        self._drift_zero = drift.is_zero
        self.newton_iterations_total = 0
        self.max_newton_iterations = 0

    # -- helpers -----------------------------------------------------------

    def _mnorm(self, v: np.ndarray) -> float:
        return math.sqrt(max(float(v @ (self._M @ v)), 0.0))

    def _free(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float)[self.system.free_nodes]

    def _rhs(self, x_f: np.ndarray, zeta_f: np.ndarray) -> np.ndarray:
        return self._M @ (x_f + zeta_f) + self._const

    def _solve_jacobian(self, dphi: np.ndarray, r: np.ndarray) -> np.ndarray:
        s = self.cfg.solve
        if self.cfg.jacobian is Jacobian.DIRECT:
            J = self._A0 - self._dtM @ sp.diags(dphi)
            return factorize(SparseMatrix.from_scipy(J), s).solve(r)
        A0, dtM = self._A0, self._dtM

        def apply_J(v):
            return A0 @ v - dtM @ (dphi * v)

        x, _ = gmres(apply_J, r, rel_tol=s.rel_tol, restart=s.restart_or_fill,
                     max_iterations=s.iteration_cap(r.size), precond=self._precond)
        return x

    # -- steps -------------------------------------------------------------

    def implicit(self, x_prev, zeta) -> np.ndarray:
        """Fully implicit backward Euler step, Newton from ``y0 = x_prev``."""
        sys_ = self.system
        x_f = self._free(x_prev)
        zeta_f = self._free(zeta)
        rhs = self._rhs(x_f, zeta_f)
        if self._drift_zero:
            self.max_newton_iterations = max(self.max_newton_iterations, 0)
            return sys_.expand(self._lin.solve(rhs))
        dt = self.cfg.dt
        scale = max(self._mnorm(rhs), np.finfo(float).tiny)
        y = x_f.copy()
        history = []
        p = self.drift
        for it in range(self.cfg.newton_max_iter + 1):
            phi = p(y)
            r = self._A0 @ y - self._dtM @ phi - rhs
            res = self._mnorm(r) / scale
            history.append(res)
            if not math.isfinite(res):
                raise DivergenceError("non-finite Newton residual", history=history)
            if res <= self.cfg.newton_tol:
                self.newton_iterations_total += it
                self.max_newton_iterations = max(self.max_newton_iterations, it)
                return sys_.expand(y)
            if it == self.cfg.newton_max_iter:
                break
            try:
                y = y - self._solve_jacobian(p.derivative(y), r)
            except ConvergenceError as exc:
                raise StepFailure(f"Jacobian solve failed: {exc}", history=history) from exc
        raise StepFailure(
            f"Newton did not converge in {self.cfg.newton_max_iter} iterations "
            f"(last relative residual {history[-1]:.3e})",
            history=history,
        )

    def semi_implicit(self, x_prev, zeta) -> np.ndarray:
        """Drift at the old level, one linear solve."""
        x_f = self._free(x_prev)
        zeta_f = self._free(zeta)
        if self._drift_zero:
            rhs = self._rhs(x_f, zeta_f)
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                rhs = self._rhs(x_f + self.cfg.dt * self.drift(x_f), zeta_f)
        if not np.all(np.isfinite(rhs)):
            raise DivergenceError("non-finite explicit drift")
        try:
            y = self._lin.solve(rhs)
        except ConvergenceError as exc:
            if math.isfinite(exc.residual):
                raise
            raise DivergenceError("linear solve overflowed") from exc
        return self.system.expand(y)

    def step(self, x_prev, zeta) -> np.ndarray:
        if self.cfg.scheme is Scheme.IMPLICIT:
            return self.implicit(x_prev, zeta)
        return self.semi_implicit(x_prev, zeta)

    def run(self, x0, increments=None, n_steps: int | None = None, noise: NodalNoise | None = None
            ) -> PathSolution:
        """Advance from ``x0`` consuming modal ``increments[m]`` (or no noise).

        ``increments`` is an array of modal increments per coarse step,
        mapped to nodes by ``noise``.
        """
        if increments is not None:
            n_steps = len(increments)
        n_steps = int(n_steps or 0)
        x = self.system.pin(x0)
        zero = np.zeros_like(x)
        start_iters = self.newton_iterations_total
        self.max_newton_iterations = 0
        max_abs = float(np.abs(x).max()) if x.size else 0.0
        max_norm = self._full_norm(x)
        for m in range(n_steps):
            zeta = zero if increments is None else noise(increments[m])
            try:
                x = self.step(x, zeta)
            except StepFailure as exc:
                exc.step = m
                exc.args = (f"step {m}: {exc.args[0]}",)
                raise
            except (ConvergenceError, NonFiniteError) as exc:
                raise StepFailure(f"step {m}: {exc}", step=m) from exc
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"step {m}: non-finite state", step=m)
            max_abs = max(max_abs, float(np.abs(x).max()))
            max_norm = max(max_norm, self._full_norm(x))
        return PathSolution(
            terminal=x,
            step_count=n_steps,
            newton_iterations_total=self.newton_iterations_total - start_iters,
            max_abs=max_abs,
            max_norm=max_norm,
            max_newton_iterations=self.max_newton_iterations,
        )

    def _full_norm(self, x) -> float:
        M = self.system.M.csr
        return math.sqrt(max(float(x @ (M @ x)), 0.0))


def backward_euler_step(system: DiscreteSystem, drift: DriftPolynomial, x_prev, zeta,
                        cfg: StepperConfig) -> np.ndarray:
    """One fully implicit step (see :meth:`TimeStepper.implicit`)."""
    return TimeStepper(system, drift, cfg).implicit(x_prev, zeta)


def semi_implicit_step(system: DiscreteSystem, drift: DriftPolynomial, x_prev, zeta,
                       cfg: StepperConfig) -> np.ndarray:
    """One semi-implicit step (see :meth:`TimeStepper.semi_implicit`)."""
    return TimeStepper(system, drift, cfg).semi_implicit(x_prev, zeta)


def coarse_steps(T: float, dt: float) -> int:
    """Number of steps of size ``dt`` covering ``[0, T]``; ``dt`` must divide ``T``."""
    if T == 0:
        return 0
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ConfigError(f"dt = {dt:g} does not divide T = {T:g}")
    return n


def solve_path(disc, spec: NoiseSpec | None, path: BrownianPath | None, cfg: StepperConfig,
               table: NodalNoise | None = None, stepper: TimeStepper | None = None) -> PathSolution:
    """Solve one sample path of ``disc`` (a :class:`~spdefem.problem.Discretization`).

    The coarse step ``cfg.dt`` must divide ``T`` and, when a path is given,
    the path's fine steps must aggregate evenly onto the coarse grid.
    """
    T = disc.problem.T
    n = coarse_steps(T, cfg.dt)
    stepper = stepper or TimeStepper(disc.system, disc.drift, cfg)
    if path is None or spec is None or n == 0:
        return stepper.run(disc.x0, None, n_steps=n)
    if path.n_fine_steps % n:
        raise ConfigError(f"{n} coarse steps do not divide the path's {path.n_fine_steps} fine steps")
    agg = path.n_fine_steps // n
    if abs(agg * path.dt_fine - cfg.dt) > 1e-9 * cfg.dt:
        raise ConfigError("path time grid is inconsistent with dt")
    table = table or NodalNoise(spec, disc.mesh)
    return stepper.run(disc.x0, path.aggregated(agg), noise=table)
