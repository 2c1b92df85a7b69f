"""Finite element solver for semilinear stochastic advection-diffusion-reaction equations.

Solves ``dX + A X dt = F(X) dt + dW`` on a rectangle with P1 elements in
space, backward Euler (fully or semi-implicit) in time and a truncated
Karhunen-Loeve expansion of the Q-Wiener noise, and measures strong
convergence orders by Monte Carlo.
"""

from .drift import DriftPolynomial, assert_admissible, divided_difference, one_sided_constant_estimate
from .errors import (
    AdmissibilityError,
    AssemblyError,
    ConfigError,
    ConstructionError,
    ConvergenceError,
    DivergenceError,
    FitError,
    NonFiniteError,
    NumericalError,
    SpdeError,
    StepFailure,
)
from .experiment import (
    ConvergenceReport,
    StudyConfig,
    StudyError,
    emit_report,
    fit_order,
    read_errors_csv,
    run_spatial_study,
    run_temporal_study,
)
from .fem import (
    DiscreteSystem,
    OperatorSpec,
    apply_dirichlet,
    assemble_mass,
    assemble_stiffness,
    coercivity_diagnostic,
    interpolate,
    l2_norm,
)
from .linalg import LinearSolver, SolveMethod, SolveSettings, SparseMatrix, build_sparse, matvec, solve_linear
from .mesh import BoundarySpec, Mesh, Tag, build_rectangle_mesh, classify_boundary
from .noise import BrownianPath, NodalNoise, NoiseSpec, build_spectrum, nodal_increment, sample_path
from .problem import (
    Discretization,
    ProblemSpec,
    benchmark_problem,
    cellular_flow,
    discretize,
    heat_exact,
    heat_problem,
)
from .stepper import (
    Jacobian,
    PathSolution,
    Scheme,
    StepperConfig,
    TimeStepper,
    backward_euler_step,
    semi_implicit_step,
    solve_path,
)

__version__ = "0.1.0"
