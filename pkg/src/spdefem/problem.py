"""Problem definition ``dX + A X dt = F(X) dt + dW`` and ready-made benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .drift import DriftPolynomial
from .fem import (
    DiscreteSystem,
    OperatorSpec,
    apply_dirichlet,
    assemble_mass,
    assemble_stiffness,
    coercivity_diagnostic,
    interpolate,
    round_up_one_digit,
)
from .mesh import BoundarySpec, Mesh, build_rectangle_mesh, classify_boundary

__all__ = [
    "ProblemSpec",
    "Discretization",
    "discretize",
    "CellularFlow",
    "cellular_flow",
    "benchmark_problem",
    "heat_problem",
    "heat_exact",
]


@dataclass(frozen=True)
class ProblemSpec:
    """Domain, operator, boundary data, drift, initial value and horizon.

    ``initial`` is a constant or ``f(x, y)``.  ``garding_shift`` is either a
    number or ``"auto"``, in which case :func:`discretize` takes the
    coercivity diagnostic's requirement rounded up to one digit.
    """

    L1: float = 1.0
    L2: float = 1.0
    operator: OperatorSpec = field(default_factory=OperatorSpec)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    drift: DriftPolynomial = field(default_factory=lambda: DriftPolynomial((0.0,)))
    initial: float | Callable = 0.0
    T: float = 1.0
    garding_shift: float | str = "auto"


@dataclass(frozen=True, eq=False)
class Discretization:
    """A problem on a concrete mesh: matrices, shifted drift and initial field."""

    problem: ProblemSpec
    mesh: Mesh
    system: DiscreteSystem
    drift: DriftPolynomial
    x0: np.ndarray
    c0: float
    lambda_min: float


def discretize(problem: ProblemSpec, nx: int, ny: int | None = None) -> Discretization:
    """Build mesh, assemble, shift to coercivity and eliminate Dirichlet nodes."""
    ny = nx if ny is None else ny
    mesh = classify_boundary(build_rectangle_mesh(problem.L1, problem.L2, nx, ny), problem.boundary)
    M = assemble_mass(mesh)
    exclude = problem.boundary.dirichlet_edges
    op = replace(problem.operator, robin_alpha0=problem.boundary.robin_alpha0, garding_shift=0.0)
    K0 = assemble_stiffness(mesh, op, robin_exclude=exclude)
    unshifted = apply_dirichlet(M, K0, problem.boundary, mesh)

    lam = float("nan")
    if problem.garding_shift == "auto":
        lam, need = coercivity_diagnostic(unshifted)
        c0 = round_up_one_digit(need) if math.isfinite(need) else 0.0
    else:
        c0 = float(problem.garding_shift)
    if c0:
        K = K0 + M.scale(c0)
        system = apply_dirichlet(M, K, problem.boundary, mesh, garding_shift=c0)
    else:
        system = unshifted
    x0 = system.pin(interpolate(mesh, problem.initial))
    return Discretization(problem, mesh, system, problem.drift.with_compensation(c0), x0, c0, lam)


@dataclass(frozen=True)
class CellularFlow:
    """Divergence-free cellular velocity tangential to every side of the box.

    Stream function ``psi = sin(pi x/L1) sin(pi y/L2)``, normalised so that
    ``|q| <= scale``.
    """

    scale: float = 1.0
    L1: float = 1.0
    L2: float = 1.0

    def __call__(self, x, y):
        a, b = np.pi * np.asarray(x) / self.L1, np.pi * np.asarray(y) / self.L2
        return self.scale * np.stack([np.sin(a) * np.cos(b), -np.cos(a) * np.sin(b)], axis=-1)


def cellular_flow(scale: float = 1.0, L1: float = 1.0, L2: float = 1.0) -> CellularFlow:
    return CellularFlow(scale, L1, L2)


def benchmark_problem(diffusion: float = 0.01, velocity_scale: float = 1.0, T: float = 1.0) -> ProblemSpec:
    """Reaction-dominated advection-diffusion-reaction benchmark on the unit square.

    ``phi(x) = x - x^5``, ``D = diffusion * I``, cellular flow, ``X = 1`` on
    ``x = 0`` and homogeneous Neumann elsewhere, ``X0 = 1``.
    """
    return ProblemSpec(
        operator=OperatorSpec(diffusion=diffusion * np.eye(2), advection=cellular_flow(velocity_scale)),
        boundary=BoundarySpec(dirichlet_edges=("left",), dirichlet_value=1.0),
        drift=DriftPolynomial((0.0, 1.0, 0.0, 0.0, 0.0, -1.0)),
        initial=1.0,
        T=T,
    )


def heat_initial(x, y):
    return np.cos(np.pi * x) * np.cos(np.pi * y)


def heat_problem(T: float = 0.1) -> ProblemSpec:
    """Neumann heat equation with ``X0 = cos(pi x) cos(pi y)`` on the unit square."""
    return ProblemSpec(operator=OperatorSpec(diffusion=np.eye(2)), initial=heat_initial, T=T,
                       garding_shift=0.0)


@dataclass(frozen=True)
class HeatExact:
    """Exact solution ``exp(-2 pi^2 T) cos(pi x) cos(pi y)`` of :func:`heat_problem`."""

    T: float

    def __call__(self, x, y):
        return math.exp(-2.0 * math.pi**2 * self.T) * heat_initial(x, y)


def heat_exact(T: float) -> HeatExact:
    return HeatExact(T)
