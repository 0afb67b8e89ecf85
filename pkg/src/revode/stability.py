"""Linear stability analysis: polynomial domains, empirical iteration, roots.

Everything here works on the scalar test equation y' = z y with unit step,
so z is the step-scaled eigenvalue.  Rasters classify each grid cell as
stable (1), unstable (0) or indeterminate (-1) when the cell sits within
rounding distance of the |R| = 1 boundary.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .tableau import ButcherTableau, StabilityPolynomial, get_tableau, \
    stability_polynomial
from .stepper import reversible_heun_step, mccallum_foster_step, rk_step

__all__ = [
    "StabilityRaster",
    "polynomial_domain",
    "empirical_boundedness",
    "empirical_domain",
    "coupled_gamma",
    "coupled_gamma_region",
    "zero_stability",
    "real_axis_boundary",
    "raster_csv",
]

BOUNDARY_TOL = 1e-9
DEFAULT_WINDOW = (-4.0, 1.0, -3.0, 3.0)


@dataclass(frozen=True)
class StabilityRaster:
    """Classified grid over a rectangle of the complex plane."""

    re: np.ndarray   # (nx,)
    im: np.ndarray   # (ny,)
    values: np.ndarray  # (ny, nx) of {1, 0, -1}

    @property
    def stable_count(self) -> int:
        return int(np.sum(self.values == 1))

    @property
    def indeterminate_count(self) -> int:
        return int(np.sum(self.values == -1))

    def mirror_symmetric(self) -> bool:
        """Conjugate symmetry about the real axis (real-coefficient schemes)."""
        if not np.allclose(self.im, -self.im[::-1]):
            return False
        return bool(np.array_equal(self.values, self.values[::-1]))


def _grid(window, nx, ny):
    x0, x1, y0, y1 = window
    return np.linspace(x0, x1, nx), np.linspace(y0, y1, ny)


def polynomial_domain(poly: StabilityPolynomial, window=DEFAULT_WINDOW,
                      nx: int = 41, ny: int = 41) -> StabilityRaster:
    """Classify |R(z)| < 1 on a raster; near-boundary cells are indeterminate."""
    xs, ys = _grid(window, nx, ny)
    Z = xs[None, :] + 1j * ys[:, None]
    mag = np.abs(poly(Z))
    vals = np.where(mag < 1.0, 1, 0).astype(np.int8)
    vals[np.abs(mag - 1.0) < BOUNDARY_TOL] = -1
    return StabilityRaster(xs, ys, vals)


def _linear_iter(kind, z, n_iters, cap, base="euler", zeta=0.999,
                 tableau: ButcherTableau | None = None):
    """Iterate the actual recurrence on y' = z y with h = 1 from unit data."""
    f = lambda _v, y: z * y
    x = complex(1.0)
    xhat = complex(1.0)
    tab = tableau or get_tableau(base)
    worst = 1.0
    for n in range(n_iters):
        if kind == "reversible-heun":
            x, xhat = reversible_heun_step(f, float(n), float(n + 1), x, xhat)
            amp = max(abs(x), abs(xhat))
        elif kind == "mccallum-foster":
            x, xhat = mccallum_foster_step(tab, f, float(n), float(n + 1),
                                           x, xhat, zeta)
            amp = max(abs(x), abs(xhat))
        else:  # one-step RK
            x = rk_step(tab, f, float(n), x, 1.0)
            amp = abs(x)
        if not np.isfinite(amp) or amp > cap:
            return False, amp if np.isfinite(amp) else np.inf, n
        worst = max(worst, amp)
        if kind not in ("reversible-heun", "mccallum-foster") and amp < 1e-12:
            break  # one-step growth is geometric; decay cannot reverse
    return True, worst, n_iters


def empirical_boundedness(kind: str, z: complex, n_iters: int = 10_000,
                          cap: float = 1e6, **params):
    """(bounded, worst amplitude, iterations run) for one test eigenvalue."""
    return _linear_iter(kind, z, n_iters, cap, **params)


def empirical_domain(kind: str, window=DEFAULT_WINDOW, nx: int = 41,
                     ny: int = 41, n_iters: int = 200, cap: float = 1e6,
                     **params) -> StabilityRaster:
    xs, ys = _grid(window, nx, ny)
    vals = np.zeros((ny, nx), dtype=np.int8)
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            bounded, _, _ = _linear_iter(kind, complex(x, y), n_iters, cap, **params)
            vals[iy, ix] = 1 if bounded else 0
    return StabilityRaster(xs, ys, vals)


def coupled_gamma(poly: StabilityPolynomial, z, zeta: float):
    """Growth indicator of the coupled two-state recurrence.

    With R the transfer function of the base *increment* (Psi_h = R(z) y,
    so R is the stability polynomial minus one), the pair update is stable
    exactly when |Gamma(z)| < 1 + zeta with
    Gamma(z) = 1 + zeta - (1 - zeta) R(-z) - R(-z) R(z);
    Gamma is the trace of the 2x2 one-step map, whose determinant is zeta.
    """
    z = np.asarray(z)
    q = poly(z) - 1.0
    qm = poly(-z) - 1.0
    return 1 + zeta - (1 - zeta) * qm - qm * q


def coupled_gamma_region(base: str | ButcherTableau, zeta: float,
                         window=DEFAULT_WINDOW, nx: int = 41,
                         ny: int = 41) -> StabilityRaster:
    """Predicted stability raster for the coupled scheme from its Gamma test."""
    tab = base if isinstance(base, ButcherTableau) else get_tableau(base)
    poly = stability_polynomial(tab)
    xs, ys = _grid(window, nx, ny)
    Z = xs[None, :] + 1j * ys[:, None]
    mag = np.abs(coupled_gamma(poly, Z, zeta))
    lim = 1 + zeta
    vals = np.where(mag < lim, 1, 0).astype(np.int8)
    vals[np.abs(mag - lim) < BOUNDARY_TOL] = -1
    return StabilityRaster(xs, ys, vals)


def zero_stability(kind: str, gamma: float = 0.96) -> dict:
    """Characteristic roots of the h -> 0 recursion on a uniform grid.

    Returns the roots plus two verdicts: the root condition (all roots in
    the closed unit disc) and simplicity of the unit-modulus roots.
    """
    if kind in ("ddim", "edict", "reversible-heun", "mccallum-foster", "rex",
                "ees25", "ees27", "rk"):
        coeffs = [1.0, -1.0]               # one-step: zeta - 1
    elif kind == "obelm":
        coeffs = [1.0, 0.0, -1.0]          # uniform grid: zeta^2 - 1
    elif kind == "bdia":
        coeffs = [1.0, -(1 - gamma), -gamma]
    else:
        raise ValueError(f"unknown solver kind {kind!r}")
    roots = np.roots(coeffs)
    mods = np.abs(roots)
    tol = 1e-10
    on_circle = roots[np.abs(mods - 1.0) < tol]
    simple = True
    for r in on_circle:
        if np.sum(np.abs(roots - r) < tol) > 1:
            simple = False
    return {
        "roots": np.sort_complex(roots),
        "root_condition": bool(np.all(mods <= 1.0 + tol)),
        "unit_roots_simple": simple,
    }


def real_axis_boundary(poly: StabilityPolynomial, lo: float = -8.0,
                       hi: float = -1e-6, tol: float = 1e-10) -> float:
    """Leftmost real z with |R(z)| = 1, by bisection from a stable point."""
    if abs(poly(lo)) <= 1:
        raise ValueError("lower bracket must be unstable")
    # march right until stable to bracket the outermost crossing
    a, b = lo, hi
    n = 1024
    xs = np.linspace(lo, hi, n)
    mags = np.abs(poly(xs))
    inside = np.nonzero(mags < 1)[0]
    if len(inside) == 0:
        raise ValueError("no stable point found in the bracket")
    k = inside[0]
    a, b = xs[k - 1], xs[k]
    for _ in range(200):
        mid = 0.5 * (a + b)
        if abs(poly(mid)) >= 1:
            a = mid
        else:
            b = mid
        if b - a < tol:
            break
    return 0.5 * (a + b)


def raster_csv(raster: StabilityRaster) -> str:
    """CSV with header re,im,value; rows sorted by (im, re)."""
    buf = io.StringIO()
    buf.write("re,im,value\n")
    for iy, y in enumerate(raster.im):
        for ix, x in enumerate(raster.re):
            buf.write(f"{x:.17g},{y:.17g},{int(raster.values[iy, ix])}\n")
    return buf.getvalue()
