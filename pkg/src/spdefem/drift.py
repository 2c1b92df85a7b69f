"""Polynomial Nemytskii drift ``F(u)(x) = phi(u(x))``.

``phi`` must have odd degree and a negative leading coefficient (degree
zero or one is accepted as the globally Lipschitz case).  A Garding shift
``c0`` moved out of the elliptic operator is added back here as ``c0 * u``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityError, NonFiniteError

__all__ = [
    "DriftPolynomial",
    "admissibility_violation",
    "assert_admissible",
    "eval_nemytskii",
    "eval_derivative",
    "divided_difference",
    "one_sided_constant_estimate",
    "lipschitz_bound",
]


@dataclass(frozen=True)
class DriftPolynomial:
    """``phi(x) = sum_k coefficients[k] x**k`` plus ``garding_compensation * x``."""

    coefficients: tuple[float, ...]
    garding_compensation: float = 0.0

    def __post_init__(self):
        c = [float(a) for a in self.coefficients]
        # trailing zeros do not change the polynomial
        while len(c) > 1 and c[-1] == 0.0:
            c.pop()
        if not c:
            c = [0.0]
        object.__setattr__(self, "coefficients", tuple(c))

    @classmethod
    def parse(cls, text: str, garding_compensation: float = 0.0) -> "DriftPolynomial":
        """From a comma list, constant term first: ``"0,1,0,0,0,-1"`` is ``x - x^5``."""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty coefficient list")
        return cls(tuple(float(p) for p in parts), garding_compensation)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def leading(self) -> float:
        return self.coefficients[-1]

    @property
    def is_zero(self) -> bool:
        return self.coefficients == (0.0,) and self.garding_compensation == 0.0

    def with_compensation(self, c0: float) -> "DriftPolynomial":
        return DriftPolynomial(self.coefficients, float(c0))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        acc = np.full_like(x, self.coefficients[-1])
        for a in reversed(self.coefficients[:-1]):
            acc = acc * x + a
        return acc + self.garding_compensation * x

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        c = self.coefficients
        if len(c) == 1:
            return np.full_like(x, self.garding_compensation)
        acc = np.full_like(x, (len(c) - 1) * c[-1])
        for k in range(len(c) - 2, 0, -1):
            acc = acc * x + k * c[k]
        return acc + self.garding_compensation

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        c = self.coefficients
        if len(c) <= 2:
            return np.zeros_like(x)
        acc = np.full_like(x, (len(c) - 1) * (len(c) - 2) * c[-1])
        for k in range(len(c) - 2, 1, -1):
            acc = acc * x + k * (k - 1) * c[k]
        return acc


def admissibility_violation(p: DriftPolynomial) -> str | None:
    """Describe why ``p`` is not admissible, or ``None`` when it is."""
    if p.degree <= 1:
        return None
    if p.degree % 2 == 0:
        return f"degree {p.degree} is even; an odd degree is required"
    if p.leading >= 0:
        return f"leading coefficient {p.leading:g} is not negative"
    return None


def assert_admissible(p: DriftPolynomial) -> None:
    msg = admissibility_violation(p)
    if msg is not None:
        raise AdmissibilityError(msg)


def _check_finite(u: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(u))
    if bad.size:
        raise NonFiniteError(f"non-finite value {u[bad[0]]!r} at node {bad[0]}", node=int(bad[0]))


def eval_nemytskii(p: DriftPolynomial, u) -> np.ndarray:
    """Nodewise ``phi(u_i) + c0 u_i``."""
    u = np.asarray(u, dtype=float)
    _check_finite(u)
    return p(u)


def eval_derivative(p: DriftPolynomial, u) -> np.ndarray:
    """Nodewise ``phi'(u_i) + c0``."""
    u = np.asarray(u, dtype=float)
    _check_finite(u)
    return p.derivative(u)


def divided_difference(p: DriftPolynomial, a, b) -> np.ndarray:
    """``(phi(a) - phi(b)) / (a - b)`` without cancellation.

    Uses ``(a^k - b^k)/(a - b) = sum_i a^i b^(k-1-i)``, so the quotient is
    accurate even when ``a`` and ``b`` nearly coincide.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.full(np.broadcast(a, b).shape, p.garding_compensation)
    # h_k = sum_{i<k} a^i b^(k-1-i) via h_k = a^(k-1) + b h_{k-1}
    h = np.zeros_like(out)
    apow = np.ones_like(out)
    for k, c in enumerate(p.coefficients[1:], start=1):
        h = apow + b * h
        apow = apow * a
        if c:
            out = out + c * h
    return out


def one_sided_constant_estimate(p: DriftPolynomial, trials: int = 10_000, seed: int = 0,
                                radii=(1.0, 10.0, 100.0)) -> float:
    """Largest sampled slope ``(phi(a) - phi(b))/(a - b)``.

    Pairs are drawn uniformly in ``[-R, R]^2`` for each radius.  Because the
    L2 pairing of a Nemytskii operator integrates this pointwise quotient,
    its supremum bounds the one-sided Lipschitz constant.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    best = -np.inf
    for R in radii:
        a = rng.uniform(-R, R, trials)
        b = rng.uniform(-R, R, trials)
        keep = a != b
        if keep.any():
            best = max(best, float(divided_difference(p, a[keep], b[keep]).max()))
    return best


def lipschitz_bound(p: DriftPolynomial, R: float, samples: int = 10_000) -> float:
    """``max_{|s| <= R} |phi'(s)|`` by dense sampling (endpoints included)."""
    s = np.linspace(-R, R, samples)
    return float(np.abs(p.derivative(s)).max())
