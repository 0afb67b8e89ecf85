"""Butcher tableaux for classical and near-reversible explicit RK schemes.

The two near-reversible families are one-parameter: a 3-stage family of
order 2 with anti-symmetric order 5, and a 4-stage family of order 2 with
anti-symmetric order 7.  Their stability polynomials are independent of
the family parameter, which the tests exploit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "TableauError",
    "ButcherTableau",
    "StabilityPolynomial",
    "ees25_tableau",
    "ees27_tableau",
    "classical_tableaux",
    "get_tableau",
    "stability_polynomial",
]

SQRT2 = math.sqrt(2.0)
_DENOM_TOL = 1e-12


class TableauError(ValueError):
    """Inadmissible parameter or malformed tableau."""


@dataclass(frozen=True)
class ButcherTableau:
    label: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int
    anti_order: int

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        s = len(b)
        if A.shape != (s, s) or c.shape != (s,):
            raise TableauError("inconsistent tableau shapes")
        if np.any(np.triu(A) != 0.0):
            raise TableauError("explicit tableau requires strictly lower triangular A")
        if abs(b.sum() - 1.0) > 1e-14:
            raise TableauError("weights must sum to 1")
        if np.max(np.abs(c - A.sum(axis=1))) > 1e-13:
            raise TableauError("nodes must equal row sums of A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def stages(self) -> int:
        return len(self.b)

    def pretty(self) -> str:
        """Tableau as text, exact rationals where representable."""

        def fmt(v: float) -> str:
            f = Fraction(v).limit_denominator(10**6)
            if abs(float(f) - v) < 1e-15 * max(1.0, abs(v)):
                return str(f)
            return f"{v:.17g}"

        lines = []
        for i in range(self.stages):
            row = " ".join(fmt(a) for a in self.A[i, :i]) if i else ""
            lines.append(f"{fmt(self.c[i]):>12} | {row}")
        lines.append("-" * 14)
        lines.append(" " * 12 + " | " + " ".join(fmt(w) for w in self.b))
        return "\n".join(lines)


@dataclass(frozen=True)
class StabilityPolynomial:
    """R(z) = sum_k coeffs[k] z^k with coeffs[0] = 1."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    def __call__(self, z):
        z = np.asarray(z)
        out = np.zeros_like(z, dtype=complex)
        for c in self.coeffs[::-1]:
            out = out * z + c
        return out

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


def _check_denominators(*dens: float):
    for d in dens:
        if abs(d) <= _DENOM_TOL:
            raise TableauError("inadmissible parameter: vanishing denominator")


def ees25_tableau(x: float) -> ButcherTableau:
    """3-stage order-2, anti-symmetric-order-5 family; x excludes {1, 1/2, -1/2}."""
    _check_denominators(4 * (1 - x), 1 - 4 * x * x)
    c2 = (1 + 2 * x) / (4 * (1 - x))
    c3 = 3 / (4 * (1 - x))
    a31 = (4 * x - 1) ** 2 / (4 * (x - 1) * (1 - 4 * x * x))
    a32 = (1 - x) / (1 - 4 * x * x)
    A = np.array([[0.0, 0.0, 0.0], [c2, 0.0, 0.0], [a31, a32, 0.0]])
    b = np.array([x, 0.5, 0.5 - x])
    c = np.array([0.0, c2, a31 + a32])
    if abs((a31 + a32) - c3) > 1e-12:
        raise TableauError("row-sum consistency failed for this parameter")
    return ButcherTableau(f"ees25(x={x:g})", A, b, c, order=2, anti_order=5)


def ees27_tableau(x: float, sign: str = "+") -> ButcherTableau:
    """4-stage order-2, anti-symmetric-order-7 family.

    sign selects the square-root branch; "+" is the branch used for the
    canonical member x = (5 - 3 sqrt 2)/14.
    """
    if sign not in ("+", "-"):
        raise TableauError("sign must be '+' or '-'")
    r = SQRT2 if sign == "+" else -SQRT2

    d_a21 = 4 * (x - 1)
    d_alpha = (2 * x - 1) * (-2 * x - r + 1)
    d_beta = (2 * x - 1) * (1 - r - 2 * x) * (2 - r - 2 * x)
    d_a31 = 4 * r * (x - 1)
    d_a4 = 4 * (x - 1) * (2 * x * x - 1)
    d_a43 = 4 * (2 * x * x - 1) * (2 * x * x - 4 * x + 1)
    _check_denominators(d_a21, d_alpha, d_beta, d_a31, d_a4, d_a43)

    alpha = (2 * x + r) / d_alpha
    beta = 1.0 / d_beta

    b1 = x
    b2 = 0.5 * (2 - r) - (1 - r) * x
    b3 = (1 - r) * (x - 1)
    b4 = 0.5 * (2 - r) - x

    a21 = (-2 + r * (1 - 2 * x)) / d_a21
    a31 = (2 * x + r - 2) * (4 * x + r - 2) / d_a31 * alpha
    a32 = 0.5 * (-1 + r) * alpha
    a41 = ((2 * x - r)
           * (-40 * x**4 + (80 - 40 * r) * x**3 - (88 - 60 * r) * x**2
              + (48 - 34 * r) * x + 7 * r - 10)
           / d_a4 * beta)
    a42 = (2 - r) * x * (x - 1) * (4 * x + r - 2) * beta
    a43 = (2 - r) * (2 * x - r) * (2 + r - 2 * x) * (x - 1) * (2 * x - 1) / d_a43

    A = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [a21, 0.0, 0.0, 0.0],
        [a31, a32, 0.0, 0.0],
        [a41, a42, a43, 0.0],
    ])
    b = np.array([b1, b2, b3, b4])
    c = A.sum(axis=1)
    if abs(b.sum() - 1.0) > 1e-12:
        raise TableauError("inadmissible parameter: weights do not sum to 1")
    return ButcherTableau(f"ees27(x={x:g},{sign})", A, b, c, order=2, anti_order=7)


EES25_DEFAULT_X = 0.1
EES27_DEFAULT_X = (5 - 3 * SQRT2) / 14


def classical_tableaux() -> dict[str, ButcherTableau]:
    """Euler, explicit midpoint, Heun's order 2, Kutta's RK3 and classical RK4."""
    t = {}
    t["euler"] = ButcherTableau(
        "euler", np.zeros((1, 1)), np.array([1.0]), np.zeros(1), order=1, anti_order=1)
    t["midpoint"] = ButcherTableau(
        "midpoint", np.array([[0.0, 0.0], [0.5, 0.0]]), np.array([0.0, 1.0]),
        np.array([0.0, 0.5]), order=2, anti_order=2)
    t["heun2"] = ButcherTableau(
        "heun2", np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0.5, 0.5]),
        np.array([0.0, 1.0]), order=2, anti_order=2)
    t["rk3"] = ButcherTableau(
        "rk3",
        np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [-1.0, 2.0, 0.0]]),
        np.array([1 / 6, 2 / 3, 1 / 6]), np.array([0.0, 0.5, 1.0]),
        order=3, anti_order=3)
    t["rk4"] = ButcherTableau(
        "rk4",
        np.array([
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]),
        np.array([1 / 6, 1 / 3, 1 / 3, 1 / 6]),
        np.array([0.0, 0.5, 0.5, 1.0]),
        order=4, anti_order=4)
    return t


def get_tableau(name: str, x: float | None = None, sign: str = "+") -> ButcherTableau:
    """Look up a tableau by name; x selects the member of a family."""
    name = name.lower()
    if name == "ees25":
        return ees25_tableau(EES25_DEFAULT_X if x is None else x)
    if name == "ees27":
        return ees27_tableau(EES27_DEFAULT_X if x is None else x, sign)
    lib = classical_tableaux()
    if name in lib:
        return lib[name]
    raise TableauError(f"unknown tableau {name!r}")


def stability_polynomial(tableau: ButcherTableau) -> StabilityPolynomial:
    """R(z) for an explicit method; r_k = b^T A^{k-1} e, exact since A is nilpotent."""
    s = tableau.stages
    coeffs = np.zeros(s + 1)
    coeffs[0] = 1.0
    v = np.ones(s)
    for k in range(1, s + 1):
        coeffs[k] = float(tableau.b @ v)
        v = tableau.A @ v
    # A is nilpotent, so trailing coefficients can be exactly zero
    while len(coeffs) > 2 and coeffs[-1] == 0.0:
        coeffs = coeffs[:-1]
    return StabilityPolynomial(coeffs)
