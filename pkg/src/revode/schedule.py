"""Variance-preserving noise schedules, reparametrised time variables and grids.

A schedule exposes the signal/noise pair (alpha_t, sigma_t) with
alpha_t^2 + sigma_t^2 = 1, the half-logSNR variable lam = log(alpha/sigma)
and the ratio variable sigma/alpha.  sigma is always derived from alpha so
the VP identity holds to rounding error by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ScheduleError",
    "NoiseSchedule",
    "TimeGrid",
    "make_schedule",
    "reparametrize",
    "build_grid",
    "alpha_from_lambda",
    "sigma_from_lambda",
]

VARIABLES = ("t", "lambda", "ratio")


class ScheduleError(ValueError):
    """Invalid schedule parameters or out-of-range query."""


def alpha_from_lambda(lam):
    """alpha as a function of lam = log(alpha/sigma); schedule independent under VP."""
    # alpha^2 = e^{2 lam} / (1 + e^{2 lam}), computed stably for both signs
    lam = np.asarray(lam, dtype=float)
    return np.sqrt(1.0 / (1.0 + np.exp(-2.0 * lam)))


def sigma_from_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    return np.sqrt(1.0 / (1.0 + np.exp(2.0 * lam)))


@dataclass(frozen=True)
class NoiseSchedule:
    """VP noise schedule; immutable and safe to share."""

    kind: str  # "linear-beta" | "cosine" | "discrete"
    T: float = 1.0
    t_min: float | None = None  # clamp; defaults to 1e-3 * T
    beta_min: float = 0.1
    beta_max: float = 20.0
    cosine_s: float = 0.008
    knots_t: np.ndarray | None = None
    knots_log_alpha: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("linear-beta", "cosine", "discrete"):
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        if self.T <= 0:
            raise ScheduleError("horizon T must be positive")
        if self.t_min is None:
            object.__setattr__(self, "t_min", 1e-3 * self.T)
        if not 0 < self.t_min < self.T:
            raise ScheduleError("t_min must lie in (0, T)")
        if self.kind == "linear-beta" and not self.beta_min < self.beta_max:
            raise ScheduleError("require beta_min < beta_max")
        if self.kind == "discrete":
            t = np.asarray(self.knots_t, dtype=float)
            la = np.asarray(self.knots_log_alpha, dtype=float)
            if t.ndim != 1 or t.shape != la.shape or t.size < 2:
                raise ScheduleError("discrete schedule needs >= 2 (t, log alpha) knots")
            if not np.all(np.diff(t) > 0):
                raise ScheduleError("knot times must be strictly increasing")
            if not np.all(np.diff(la) < 0):
                raise ScheduleError("log alpha knots must be strictly decreasing")
            if t[0] > self.t_min or t[-1] < self.T:
                raise ScheduleError("knots must cover [t_min, T]")
            object.__setattr__(self, "knots_t", t)
            object.__setattr__(self, "knots_log_alpha", la)

    # -- primitives ---------------------------------------------------------

    def log_alpha(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear-beta":
            return -0.25 * t**2 * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min
        if self.kind == "cosine":
            s = self.cosine_s
            f = np.cos((t / self.T + s) / (1 + s) * math.pi / 2)
            f0 = math.cos(s / (1 + s) * math.pi / 2)
            return np.log(f / f0)
        return np.interp(t, self.knots_t, self.knots_log_alpha)

    def dlog_alpha_dt(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear-beta":
            return -0.5 * t * (self.beta_max - self.beta_min) - 0.5 * self.beta_min
        if self.kind == "cosine":
            s = self.cosine_s
            u = (t / self.T + s) / (1 + s) * math.pi / 2
            return -np.tan(u) * math.pi / (2 * self.T * (1 + s))
        # slope of the containing piecewise-linear segment
        idx = np.clip(np.searchsorted(self.knots_t, t, side="right") - 1, 0,
                      len(self.knots_t) - 2)
        dt = np.diff(self.knots_t)
        dla = np.diff(self.knots_log_alpha)
        return (dla / dt)[idx]

    def alpha(self, t):
        return np.exp(self.log_alpha(t))

    def sigma(self, t):
        a2 = np.exp(2.0 * self.log_alpha(t))
        return np.sqrt(np.maximum(1.0 - a2, 0.0))

    def lam(self, t):
        a = self.alpha(t)
        s = self.sigma(t)
        with np.errstate(divide="ignore"):
            return np.log(a) - np.log(s)

    def ratio(self, t):
        return self.sigma(t) / self.alpha(t)

    # -- inversion ----------------------------------------------------------

    def t_of_lambda(self, lam_value, tol=1e-12, max_iter=200):
        """Invert lam(t) by bisection on [t_min-ish, T]; lam is strictly decreasing."""
        lam_value = float(lam_value)
        lo, hi = 1e-12 * self.T, self.T
        f_lo = self.lam(lo) - lam_value
        f_hi = self.lam(hi) - lam_value
        if f_lo < 0 or f_hi > 0:
            raise ScheduleError(f"lambda value {lam_value} outside schedule range")
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            f_mid = float(self.lam(mid)) - lam_value
            if f_mid > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol * max(1.0, abs(mid)):
                break
        else:
            raise ScheduleError("t(lambda) bisection did not converge")
        return 0.5 * (lo + hi)

    def value(self, t, variable):
        if variable == "t":
            return float(np.asarray(t, dtype=float))
        if variable == "lambda":
            return float(self.lam(t))
        if variable == "ratio":
            return float(self.ratio(t))
        raise ScheduleError(f"unknown variable {variable!r}")


def make_schedule(kind: str, params: dict | None = None) -> NoiseSchedule:
    """Build a schedule; kind is one of linear-beta, cosine, discrete."""
    params = dict(params or {})
    alias = {"analytic-linear-beta": "linear-beta", "analytic-cosine": "cosine",
             "discrete-interpolated": "discrete"}
    kind = alias.get(kind, kind)
    if kind == "discrete" and "knots" in params:
        knots = np.asarray(params.pop("knots"), dtype=float)
        params["knots_t"] = knots[:, 0]
        params["knots_log_alpha"] = knots[:, 1]
    allowed = {"T", "t_min", "beta_min", "beta_max", "cosine_s",
               "knots_t", "knots_log_alpha"}
    unknown = set(params) - allowed
    if unknown:
        raise ScheduleError(f"unknown schedule parameters: {sorted(unknown)}")
    return NoiseSchedule(kind=kind, **params)


def reparametrize(schedule: NoiseSchedule, value: float, from_var: str, to_var: str) -> float:
    """Convert a scalar among the variables t, lambda and ratio = sigma/alpha."""
    if from_var not in VARIABLES or to_var not in VARIABLES:
        raise ScheduleError(f"variables must be one of {VARIABLES}")
    value = float(value)
    if from_var == to_var:
        return value
    # normalise through lambda: lam = -log(ratio) exactly
    if from_var == "lambda":
        lam = value
    elif from_var == "ratio":
        if value <= 0:
            raise ScheduleError("ratio must be positive")
        lam = -math.log(value)
    else:
        if not 0 < value <= schedule.T:
            raise ScheduleError(f"t={value} outside (0, T]")
        lam = float(schedule.lam(value))
    if to_var == "lambda":
        return lam
    if to_var == "ratio":
        return math.exp(-lam)
    return schedule.t_of_lambda(lam)


@dataclass(frozen=True)
class TimeGrid:
    """Discretisation nodes in a chosen variable, tied to a schedule.

    Nodes are stored exactly in the grid's own variable, ordered from the
    data end (index 0, t = t_min) to the noise end (index N, t = s * T);
    sampling traverses them downward, inversion upward.  direction records
    the intended traversal and is metadata only.
    """

    schedule: NoiseSchedule
    variable: str
    strength: float
    raw_nodes: np.ndarray = field(repr=False)
    direction: str = "inversion"

    def __post_init__(self):
        v = np.asarray(self.raw_nodes, dtype=float)
        d = np.diff(v)
        if v.size < 2 or not (np.all(d > 0) or np.all(d < 0)):
            raise ScheduleError("grid nodes must be strictly monotone")
        object.__setattr__(self, "raw_nodes", v)

    @property
    def n_steps(self) -> int:
        return len(self.raw_nodes) - 1

    def lambda_nodes(self) -> np.ndarray:
        if self.variable == "lambda":
            return self.raw_nodes.copy()
        if self.variable == "ratio":
            return -np.log(self.raw_nodes)
        return np.asarray(self.schedule.lam(self.raw_nodes), dtype=float)

    def nodes(self, variable: str | None = None) -> np.ndarray:
        """Node values in the requested variable, same ordering as stored."""
        variable = variable or self.variable
        if variable == self.variable:
            return self.raw_nodes.copy()
        if variable == "lambda":
            return self.lambda_nodes()
        if variable == "ratio":
            return np.exp(-self.lambda_nodes())
        if variable == "t":
            return np.array([self.schedule.t_of_lambda(l) for l in self.lambda_nodes()])
        raise ScheduleError(f"unknown variable {variable!r}")

    def alphas(self) -> np.ndarray:
        if self.variable == "t":
            return np.asarray(self.schedule.alpha(self.raw_nodes), dtype=float)
        return alpha_from_lambda(self.lambda_nodes())

    def sigmas(self) -> np.ndarray:
        if self.variable == "t":
            return np.asarray(self.schedule.sigma(self.raw_nodes), dtype=float)
        return sigma_from_lambda(self.lambda_nodes())


def build_grid(schedule: NoiseSchedule, variable: str, n_steps: int,
               strength: float = 1.0, direction: str = "inversion") -> TimeGrid:
    """Uniform grid in the chosen variable between t_min and strength * T."""
    if n_steps < 1:
        raise ScheduleError("need at least one step")
    if not 0 < strength <= 1:
        raise ScheduleError("strength must lie in (0, 1]")
    if direction not in ("inversion", "sampling"):
        raise ScheduleError(f"unknown direction {direction!r}")
    t_lo = schedule.t_min
    t_hi = strength * schedule.T
    if t_hi <= t_lo:
        raise ScheduleError("degenerate interval: strength * T <= t_min")
    if variable not in VARIABLES:
        raise ScheduleError(f"unknown variable {variable!r}")
    v_lo = schedule.value(t_lo, variable)
    v_hi = schedule.value(t_hi, variable)
    nodes = np.linspace(v_lo, v_hi, n_steps + 1)
    return TimeGrid(schedule=schedule, variable=variable, strength=strength,
                    raw_nodes=nodes, direction=direction)
