import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spdefem.drift import (
    DriftPolynomial,
    admissibility_violation,
    assert_admissible,
    divided_difference,
    eval_derivative,
    eval_nemytskii,
    lipschitz_bound,
    one_sided_constant_estimate,
)
from spdefem.errors import AdmissibilityError, NonFiniteError
from spdefem.fem import assemble_mass
from spdefem.mesh import build_rectangle_mesh

PHI = DriftPolynomial.parse("0,1,0,0,0,-1")


def test_parse_and_trailing_zeros():
    assert PHI.coefficients == (0.0, 1.0, 0.0, 0.0, 0.0, -1.0)
    assert PHI.degree == 5 and PHI.leading == -1.0
    assert DriftPolynomial((1.0, 2.0, 0.0, 0.0)).degree == 1
    assert DriftPolynomial((0.0,)).is_zero
    with pytest.raises(ValueError):
        DriftPolynomial.parse(" , ")


def test_admissibility():
    assert_admissible(PHI)
    assert_admissible(DriftPolynomial((3.0, -2.0)))
    assert_admissible(DriftPolynomial((1.0,)))
    assert "even" in admissibility_violation(DriftPolynomial((0, 0, 1)))
    assert "leading" in admissibility_violation(DriftPolynomial((0, 0, 0, 1)))
    with pytest.raises(AdmissibilityError):
        assert_admissible(DriftPolynomial((0, 0, 0, 1)))


def test_nemytskii_examples():
    for val, expected in ((0.0, 0.0), (1.0, 0.0), (2.0, -30.0)):
        np.testing.assert_array_equal(eval_nemytskii(PHI, np.full(5, val)), np.full(5, expected))


def test_derivative_examples():
    assert eval_derivative(PHI, [0.0])[0] == 1.0
    assert eval_derivative(PHI, [1.0])[0] == -4.0
    lin = DriftPolynomial((0.5, 3.0))
    np.testing.assert_array_equal(eval_derivative(lin, np.linspace(-5, 5, 7)), 3.0)


def test_compensation():
    p = PHI.with_compensation(0.3)
    x = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(p(x), PHI(x) + 0.3 * x, atol=1e-15)
    np.testing.assert_allclose(p.derivative(x), PHI.derivative(x) + 0.3, atol=1e-15)


def test_non_finite_reports_node():
    u = np.array([0.0, 1.0, np.nan, 2.0])
    with pytest.raises(NonFiniteError) as info:
        eval_nemytskii(PHI, u)
    assert info.value.node == 2
    with pytest.raises(NonFiniteError):
        eval_derivative(PHI, np.array([np.inf]))


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=7), st.fractions(-3, 3, max_denominator=16))
def test_evaluation_exact_on_rationals(coeffs, x):
    p = DriftPolynomial(tuple(float(c) for c in coeffs))
    exact = sum(Fraction(c) * x**k for k, c in enumerate(coeffs))
    assert p(float(x)) == pytest.approx(float(exact), rel=1e-12, abs=1e-12)


def test_directional_derivative_first_order():
    a = np.linspace(-1.5, 1.5, 31)
    errs = []
    for eps in (1e-4, 1e-5, 1e-6):
        fd = (PHI(a + eps) - PHI(a)) / eps
        errs.append(np.max(np.abs(fd - PHI.derivative(a))))
    C = max(e / eps for e, eps in zip(errs, (1e-4, 1e-5, 1e-6)))
    assert C < 100
    assert errs[0] / errs[1] == pytest.approx(10, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(10, rel=0.2)


def test_second_derivative():
    x = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(PHI.second_derivative(x), -20 * x**3, atol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_divided_difference_matches_quotient(a, b):
    if abs(a - b) < 1e-3:
        return
    expected = (PHI(a) - PHI(b)) / (a - b)
    assert divided_difference(PHI, a, b) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_divided_difference_limit_is_derivative():
    a = np.linspace(-2, 2, 17)
    np.testing.assert_allclose(divided_difference(PHI, a, a), PHI.derivative(a), rtol=1e-14, atol=1e-14)


def test_one_sided_estimates():
    est = one_sided_constant_estimate(PHI, trials=10_000, seed=0)
    assert 0.99 < est <= 1 + 1e-12
    assert one_sided_constant_estimate(DriftPolynomial((0, 0, 0, -1)), trials=10_000, seed=1) <= 1e-12
    assert one_sided_constant_estimate(DriftPolynomial((0, 2)), trials=100) == pytest.approx(2.0, abs=1e-14)


def test_identity_polynomial_nonnegative():
    # a^4 + a^3 b + a^2 b^2 + a b^3 + b^4 >= 0, so the quintic part is monotone decreasing
    rng = np.random.default_rng(5)
    a, b = rng.uniform(-10, 10, (2, 10_000))
    s = a**4 + a**3 * b + a**2 * b**2 + a * b**3 + b**4
    assert np.all(s >= 0)


def test_field_monotonicity_and_lipschitz_growth():
    rng = np.random.default_rng(11)
    for n in (3, 6, 11):
        mesh = build_rectangle_mesh(1, rng.uniform(0.5, 2), n, n + 1)
        M = assemble_mass(mesh).csr
        for _ in range(10):
            R = 1.5
            u = rng.uniform(-R, R, mesh.n_nodes)
            v = rng.uniform(-R, R, mesh.n_nodes)
            d = u - v
            lhs = d @ (M @ (PHI(u) - PHI(v)))
            assert lhs <= (1 + 1e-10) * (d @ (M @ d))
            L = lipschitz_bound(PHI, R)
            assert L == pytest.approx(5 * R**4 - 1, rel=1e-6)
            Fd = PHI(u) - PHI(v)
            assert math.sqrt(Fd @ (M @ Fd)) <= L * math.sqrt(d @ (M @ d))
