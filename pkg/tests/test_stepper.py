import math

import numpy as np
import pytest

from spdefem.drift import DriftPolynomial
from spdefem.errors import ConfigError, DivergenceError, StepFailure
from spdefem.fem import DiscreteSystem, l2_norm
from spdefem.linalg import SparseMatrix, build_sparse
from spdefem.noise import NodalNoise, build_spectrum, sample_path
from spdefem.problem import benchmark_problem, discretize, heat_exact, heat_problem
from spdefem.stepper import (
    Jacobian,
    Scheme,
    StepperConfig,
    TimeStepper,
    backward_euler_step,
    coarse_steps,
    semi_implicit_step,
    solve_path,
)

ZERO = DriftPolynomial((0.0,))


def scalar_system(m: float, k: float) -> DiscreteSystem:
    M = SparseMatrix.from_dense([[m]])
    K = build_sparse(1, 1, [(0, 0, k)])
    empty = build_sparse(1, 0, [])
    return DiscreteSystem(M, K, np.zeros(0, dtype=np.int64), np.zeros(0), np.array([0]), M, K, empty, empty)


def bisection(f, lo, hi, tol=1e-15):
    flo = f(lo)
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("lam,dt,x", [(2.0, 0.1, 3.0), (0.0, 1.0, -1.0), (50.0, 0.01, 0.5)])
def test_linear_resolvent(lam, dt, x):
    y = backward_euler_step(scalar_system(1.0, lam), ZERO, [x], [0.0], StepperConfig(dt=dt))
    assert y[0] == pytest.approx(x / (1 + dt * lam), rel=1e-14)


def test_cubic_root_matches_bisection():
    oracle = bisection(lambda y: y + y**3 - 2.0, 0.0, 2.0)
    assert oracle == pytest.approx(1.0, abs=1e-14)
    for jac in Jacobian:
        cfg = StepperConfig(dt=1.0, jacobian=jac)
        y = backward_euler_step(scalar_system(1.0, 0.0), DriftPolynomial((0, 0, 0, -1)), [2.0], [0.0], cfg)
        assert abs(y[0] - oracle) <= 1e-12


@pytest.mark.parametrize("x,zeta,dt", [(0.3, 0.1, 0.5), (-4.0, 0.0, 0.25), (10.0, -2.0, 0.1)])
def test_scalar_quintic_matches_bisection(x, zeta, dt):
    phi = DriftPolynomial((0, 1, 0, 0, 0, -1))
    lam = 1.5
    rhs = x + zeta

    def g(y):
        return (1 + dt * lam) * y - dt * (y - y**5) - rhs

    oracle = bisection(g, -20.0, 20.0)
    y = backward_euler_step(scalar_system(1.0, lam), phi, [x], [zeta], StepperConfig(dt=dt, newton_tol=1e-15))
    assert abs(y[0] - oracle) <= 1e-12 * max(1.0, abs(oracle))


def test_zero_state_is_fixed():
    disc = discretize(heat_problem(), 6)
    z = np.zeros(disc.mesh.n_nodes)
    phi = DriftPolynomial((0, 1, 0, 0, 0, -1))
    cfg = StepperConfig(dt=0.1)
    np.testing.assert_array_equal(backward_euler_step(disc.system, phi, z, z, cfg), 0.0)
    np.testing.assert_array_equal(semi_implicit_step(disc.system, phi, z, z, cfg), 0.0)


def test_schemes_coincide_without_drift():
    disc = discretize(heat_problem(), 6)
    rng = np.random.default_rng(0)
    x, z = rng.normal(size=(2, disc.mesh.n_nodes))
    cfg = StepperConfig(dt=0.05)
    a = backward_euler_step(disc.system, ZERO, x, z, cfg)
    b = semi_implicit_step(disc.system, ZERO, x, z, cfg)
    np.testing.assert_array_equal(a, b)


def test_semi_implicit_scalar():
    lam, dt, x = 3.0, 0.2, 1.7
    cfg = StepperConfig(scheme=Scheme.SEMI_IMPLICIT, dt=dt)
    y = semi_implicit_step(scalar_system(1.0, lam), DriftPolynomial((0, 1)), [x], [0.0], cfg)
    assert y[0] == pytest.approx(x * (1 + dt) / (1 + dt * lam), rel=1e-14)


def test_well_posedness_guard():
    with pytest.raises(ConfigError):
        TimeStepper(scalar_system(1.0, 0.0), DriftPolynomial((0, 1)), StepperConfig(dt=1.0))
    TimeStepper(scalar_system(1.0, 0.0), DriftPolynomial((0, 1)), StepperConfig(dt=0.99))
    with pytest.raises(ConfigError):
        StepperConfig(dt=0.0)


def test_newton_failure_carries_history():
    cfg = StepperConfig(dt=1.0, newton_max_iter=1)
    with pytest.raises(StepFailure) as info:
        backward_euler_step(scalar_system(1.0, 0.0), DriftPolynomial((0, 0, 0, -1)), [2.0], [0.0], cfg)
    assert len(info.value.history) == 2
    assert info.value.history[-1] > cfg.newton_tol


def test_divergence_is_reported_with_step():
    st = TimeStepper(scalar_system(1.0, 0.0), DriftPolynomial((0, 1, 0, 0, 0, -1)),
                     StepperConfig(scheme=Scheme.SEMI_IMPLICIT, dt=0.5))
    with pytest.raises(DivergenceError) as info:
        with np.errstate(over="ignore", invalid="ignore"):
            st.run(np.array([1e30]), n_steps=5)
    assert info.value.step is not None


def test_dirichlet_nodes_pinned_and_lifting():
    disc = discretize(benchmark_problem(), 8)
    cfg = StepperConfig(dt=1 / 16)
    x = np.zeros(disc.mesh.n_nodes)
    y = backward_euler_step(disc.system, disc.drift, x, np.ones_like(x), cfg)
    np.testing.assert_array_equal(y[disc.system.dirichlet_nodes], 1.0)
    # the constant field 1 is a steady state of the benchmark (phi(1) = 0, zero flux)
    one = np.ones(disc.mesh.n_nodes)
    np.testing.assert_allclose(backward_euler_step(disc.system, disc.drift, one, 0 * one, cfg), 1.0, atol=1e-12)
    np.testing.assert_allclose(semi_implicit_step(disc.system, disc.drift, one, 0 * one, cfg), 1.0, atol=1e-12)


def test_direct_and_krylov_newton_agree():
    disc = discretize(benchmark_problem(), 8)
    spec = build_spectrum(2.0, 0.001, 16, 16)
    path = sample_path(spec, 32, 1 / 32, 0, 0)
    sols = [solve_path(disc, spec, path, StepperConfig(dt=1 / 32, jacobian=j)) for j in Jacobian]
    np.testing.assert_allclose(sols[0].terminal, sols[1].terminal, rtol=0, atol=1e-12)


def test_zero_horizon():
    disc = discretize(heat_problem(T=0.0), 4)
    sol = solve_path(disc, None, None, StepperConfig(dt=0.01))
    assert sol.step_count == 0
    np.testing.assert_array_equal(sol.terminal, disc.x0)
    assert coarse_steps(0.0, 0.1) == 0


def test_zero_everything_stays_zero():
    from spdefem.problem import ProblemSpec
    disc = discretize(ProblemSpec(initial=0.0, T=0.5, garding_shift=0.0), 4)
    spec = build_spectrum(2.0, 0.001, 4, 4)
    path = sample_path(spec, 8, 1 / 16, 0, 0)
    zero_path = type(path)(0, 0, 8, 1 / 16, np.zeros_like(path.increments))
    sol = solve_path(disc, spec, zero_path, StepperConfig(dt=1 / 16))
    np.testing.assert_array_equal(sol.terminal, 0.0)


def test_dt_must_divide_horizon():
    disc = discretize(heat_problem(T=0.1), 4)
    with pytest.raises(ConfigError):
        solve_path(disc, None, None, StepperConfig(dt=0.03))


def test_heat_separation_of_variables():
    T = 0.1
    disc = discretize(heat_problem(T=T), 32)
    sol = solve_path(disc, None, None, StepperConfig(dt=1e-3))
    exact = heat_exact(T)(disc.mesh.x, disc.mesh.y)
    assert np.max(np.abs(sol.terminal - exact)) <= 2e-2


def test_contraction_of_resolvent_steps():
    disc = discretize(benchmark_problem(), 8)
    s = disc.system
    st = TimeStepper(s, DriftPolynomial((0.0,)), StepperConfig(dt=0.1))
    rng = np.random.default_rng(2)
    for _ in range(5):
        v = rng.normal(size=s.n_free)
        nv = math.sqrt(v @ (s.M_ff @ v))
        # homogeneous boundary data: the free-node resolvent alone
        y = st._lin.solve(s.M_ff @ v)
        assert math.sqrt(y @ (s.M_ff @ y)) <= nv * (1 + 1e-12)


def test_scheme_consistency_gap_halves():
    disc = discretize(benchmark_problem(), 16)
    spec = build_spectrum(2.0, 0.001, 64, 64)
    table = NodalNoise(spec, disc.mesh)
    dts = (1 / 64, 1 / 128)
    steppers = {(sc, dt): TimeStepper(disc.system, disc.drift, StepperConfig(scheme=sc, dt=dt))
                for sc in Scheme for dt in dts}
    gaps = {dt: [] for dt in dts}
    M = disc.system.M
    for s in range(10):
        path = sample_path(spec, 128, 1 / 128, 0, s)
        for dt in dts:
            a, b = (solve_path(disc, spec, path, steppers[(sc, dt)].cfg, table, steppers[(sc, dt)]).terminal
                    for sc in Scheme)
            gaps[dt].append(abs(l2_norm(M, a) - l2_norm(M, b)))
    ratio = np.mean(gaps[dts[0]]) / np.mean(gaps[dts[1]])
    assert 1.5 <= ratio <= 2.5


def test_newton_locality_and_moment_bound():
    disc = discretize(benchmark_problem(), 32)
    spec = build_spectrum(2.0, 0.001, 64, 64)
    table = NodalNoise(spec, disc.mesh)
    st = TimeStepper(disc.system, disc.drift, StepperConfig(dt=1 / 16))
    worst_iter, worst_norm = 0, 0.0
    for s in range(50):
        path = sample_path(spec, 16, 1 / 16, 0, s)
        sol = solve_path(disc, spec, path, st.cfg, table, st)
        assert np.all(np.isfinite(sol.terminal))
        worst_iter = max(worst_iter, sol.max_newton_iterations)
        worst_norm = max(worst_norm, sol.max_norm)
    assert worst_iter <= 8
    assert worst_norm < 10.0
