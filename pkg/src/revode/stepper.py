"""Forward and inverse step rules for every solver family.

Grid convention: node 0 sits at the data end (t = t_min) and node N at the
noise end (t = s * T).  A sampling pass walks N -> 0 using each solver's
printed forward update; an inversion pass walks 0 -> N using the exact
algebraic inverse where one exists (EDICT, BDIA, O-BELM, Reversible Heun,
McCallum-Foster, Rex), the reverse-direction rule for DDIM, and the
negative-step increment for RK/EES schemes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .field import FieldModel, GuidanceConfig, SchedulePoint, guided_eps
from .schedule import NoiseSchedule, TimeGrid
from .tableau import ButcherTableau, get_tableau

__all__ = [
    "DivergenceError",
    "OdeFormulation",
    "Trajectory",
    "SolverSession",
    "rk_step",
    "reversible_heun_step",
    "reversible_heun_unstep",
    "mccallum_foster_step",
    "mccallum_foster_unstep",
    "make_session",
    "SOLVER_KINDS",
    "evals_per_step",
    "steps_for_budget",
]

DIVERGENCE_NORM = 1e12

SOLVER_KINDS = ("ddim", "edict", "bdia", "obelm", "reversible-heun",
                "mccallum-foster", "rex", "ees25", "ees27", "rk")


class DivergenceError(RuntimeError):
    """Non-finite or runaway state during integration."""

    def __init__(self, message, step_index=None, stage=None, trajectory=None):
        super().__init__(message)
        self.step_index = step_index
        self.stage = stage
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# generic explicit RK step


def rk_step(tableau: ButcherTableau, f: Callable, t: float, y, h: float):
    """One explicit RK step y + h * sum b_i k_i; h may be negative."""
    ks = []
    for i in range(tableau.stages):
        yi = y
        for j in range(i):
            aij = tableau.A[i, j]
            if aij != 0.0:
                yi = yi + h * aij * ks[j]
        ki = f(t + tableau.c[i] * h, yi)
        if not np.all(np.isfinite(ki)):
            raise DivergenceError(f"non-finite RK stage {i}", stage=i)
        ks.append(ki)
    out = y
    for bi, ki in zip(tableau.b, ks):
        if bi != 0.0:
            out = out + h * bi * ki
    return out


def rk_increment(tableau, f, t, y, h):
    """The increment Psi_h(t, y) with the step size folded in."""
    return rk_step(tableau, f, t, y, h) - y


# ---------------------------------------------------------------------------
# reversible one-step cores (shared with the stability probes)


def reversible_heun_step(f, v_from, v_to, x, xhat):
    """Forward update over [v_from, v_to]; two evaluations, no carried slope."""
    h = v_to - v_from
    k0 = f(v_from, xhat)
    xhat_new = 2 * x - xhat + h * k0
    k1 = f(v_to, xhat_new)
    x_new = x + 0.5 * h * (k0 + k1)
    return x_new, xhat_new


def reversible_heun_unstep(f, v_from, v_to, x, xhat):
    """Exact inverse of reversible_heun_step(v_from -> v_to)."""
    h = v_to - v_from
    k1 = f(v_to, xhat)
    xhat_prev = 2 * x - xhat - h * k1
    k0 = f(v_from, xhat_prev)
    x_prev = x - 0.5 * h * (k0 + k1)
    return x_prev, xhat_prev


def mccallum_foster_step(tableau, f, v_from, v_to, x, xhat, zeta):
    h = v_to - v_from
    x_new = zeta * x + (1 - zeta) * xhat + rk_increment(tableau, f, v_from, xhat, h)
    xhat_new = xhat - rk_increment(tableau, f, v_to, x_new, -h)
    return x_new, xhat_new

def mccallum_foster_unstep(tableau, f, v_from, v_to, x, xhat, zeta):
    h = v_to - v_from
    xhat_prev = xhat + rk_increment(tableau, f, v_to, x, -h)
    x_prev = (x - (1 - zeta) * xhat_prev
              - rk_increment(tableau, f, v_from, xhat_prev, h)) / zeta
    return x_prev, xhat_prev


# ---------------------------------------------------------------------------
# ODE formulations


@dataclass(frozen=True)
class OdeFormulation:
    parametrisation: str  # "t-original" | "lambda-eps" | "lambda-x0" | "ratio-ddim"
    treatment: str = "black-box"  # "black-box" | "semilinear"

    def __post_init__(self):
        if self.parametrisation not in ("t-original", "lambda-eps", "lambda-x0",
                                        "ratio-ddim"):
            raise ValueError(f"unknown parametrisation {self.parametrisation!r}")
        if self.treatment not in ("black-box", "semilinear"):
            raise ValueError(f"unknown treatment {self.treatment!r}")
        if self.treatment == "semilinear" and self.parametrisation not in (
                "lambda-eps", "lambda-x0"):
            raise ValueError("semilinear treatment only applies to the lambda forms")

    @property
    def variable(self) -> str:
        return {"t-original": "t", "lambda-eps": "lambda", "lambda-x0": "lambda",
                "ratio-ddim": "ratio"}[self.parametrisation]


DEFAULT_FORMULATIONS = {
    "ees25": OdeFormulation("lambda-x0", "semilinear"),
    "ees27": OdeFormulation("lambda-x0", "semilinear"),
    "rk": OdeFormulation("lambda-x0", "semilinear"),
    "reversible-heun": OdeFormulation("lambda-x0", "black-box"),
    "mccallum-foster": OdeFormulation("lambda-x0", "black-box"),
}


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    grid_values: list
    states: list  # x-space vectors, in traversal order
    nfe: int = 0
    solver: str = ""
    direction: str = ""

    @property
    def terminal(self):
        return self.states[-1]


# ---------------------------------------------------------------------------
# sessions


class SolverSession:
    """A solver bound to a schedule, grid, field and guidance.

    Holds the mutable stepping state (primary state, auxiliaries, history)
    between passes, so inversion followed by sampling retraces exactly for
    the algebraically reversible kinds.
    """

    def __init__(self, kind: str, schedule: NoiseSchedule, grid: TimeGrid,
                 model: FieldModel, guidance: GuidanceConfig,
                 formulation: OdeFormulation | None = None,
                 p: float = 0.93, gamma: float = 0.96, zeta: float = 0.999,
                 base: str = "euler", tableau: ButcherTableau | None = None,
                 ees_x: float | None = None):
        if kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {kind!r}")
        self.kind = kind
        self.schedule = schedule
        self.grid = grid
        self.model = model
        self.guidance = guidance
        self.p = p
        self.gamma = gamma
        self.zeta = zeta
        self.base_tableau = get_tableau(base)
        if kind == "ees25":
            tableau = get_tableau("ees25", ees_x)
        elif kind == "ees27":
            tableau = get_tableau("ees27", ees_x)
        elif kind == "rk" and tableau is None:
            tableau = get_tableau("rk4")
        self.tableau = tableau
        self.formulation = formulation or DEFAULT_FORMULATIONS.get(kind)
        if kind == "edict" and not 0 < p <= 1:
            raise ValueError("EDICT mixing p must lie in (0, 1]")
        if kind == "bdia" and not 0 < gamma <= 1:
            raise ValueError("BDIA gamma must lie in (0, 1]")
        if kind in ("mccallum-foster", "rex") and not 0 < zeta <= 1:
            raise ValueError("coupling zeta must lie in (0, 1]")

        self.alphas = grid.alphas()
        self.sigmas = grid.sigmas()
        self.lambdas = grid.lambda_nodes()
        self.ratios = np.exp(-self.lambdas)
        self.points = [SchedulePoint(a, s, l) for a, s, l in
                       zip(self.alphas, self.sigmas, self.lambdas)]
        if self.formulation is not None:
            self.var_nodes = grid.nodes(self.formulation.variable)
        else:
            self.var_nodes = self.lambdas
        self.nfe = 0
        self.x = None
        self.aux: dict = {}
        self.idx = None
        self._phase = "sampling"

    # -- field access -------------------------------------------------------

    def _eps(self, x, point):
        self.nfe += 1
        return guided_eps(self.model, self.guidance, x, point, self._phase)

    def _point_at_var(self, v: float) -> SchedulePoint:
        var = self.formulation.variable
        if var == "lambda":
            return SchedulePoint.from_lambda(v)
        if var == "ratio":
            return SchedulePoint.from_lambda(-math.log(v))
        return SchedulePoint.from_schedule_t(self.schedule, v)

    def _rhs(self, v, state):
        """Formulation right-hand side in state coordinates."""
        form = self.formulation
        point = self._point_at_var(v)
        a, s = point.alpha, point.sigma
        par, semi = form.parametrisation, form.treatment == "semilinear"
        if par == "t-original":
            eps = self._eps(state, point)
            return float(self.schedule.dlog_alpha_dt(v)) * (state - eps / s)
        if par == "lambda-eps":
            if semi:
                x = a * state
                return -math.exp(-point.lam) * self._eps(x, point)
            eps = self._eps(state, point)
            return s * s * state - s * eps
        if par == "lambda-x0":
            if semi:
                x = s * state
                eps = self._eps(x, point)
                x0 = (x - s * eps) / a
                return math.exp(point.lam) * x0
            eps = self._eps(state, point)
            x0 = (state - s * eps) / a
            return -a * a * state + a * x0
        # ratio-ddim: state z = x / alpha, dz/du = eps
        return self._eps(a * state, point)

    def _to_state(self, x, i):
        form = self.formulation
        if form.parametrisation == "ratio-ddim":
            return x / self.alphas[i]
        if form.treatment == "semilinear":
            if form.parametrisation == "lambda-eps":
                return x / self.alphas[i]
            return x / self.sigmas[i]
        return x

    def _from_state(self, state, i):
        form = self.formulation
        if form.parametrisation == "ratio-ddim":
            return state * self.alphas[i]
        if form.treatment == "semilinear":
            if form.parametrisation == "lambda-eps":
                return state * self.alphas[i]
            return state * self.sigmas[i]
        return state

    # -- session lifecycle --------------------------------------------------

    def init(self, x0: np.ndarray, at: str = "data"):
        """Place the session at one end of the grid and reset auxiliaries."""
        x0 = np.asarray(x0, dtype=float)
        self.idx = 0 if at == "data" else self.grid.n_steps
        self.x = x0.copy()
        if self.kind == "edict":
            self.aux = {"y": x0.copy()}
        elif self.kind in ("reversible-heun", "mccallum-foster", "rex"):
            self.aux = {"xhat": x0.copy()}
        elif self.kind in ("bdia", "obelm"):
            self.aux = {"prev": None, "ahead": None, "prev_idx": None}
        else:
            self.aux = {}
        self.nfe = 0
        return self

    def _check(self, step_index, *arrays):
        for arr in arrays:
            a = np.asarray(arr)
            if not np.all(np.isfinite(a)) or np.max(np.abs(a)) > DIVERGENCE_NORM:
                raise DivergenceError("state diverged", step_index=step_index)

    # -- DDIM ---------------------------------------------------------------

    def _ddim_move(self, x, i, j, eps=None):
        a = self.alphas[j] / self.alphas[i]
        b = self.sigmas[j] - a * self.sigmas[i]
        if eps is None:
            eps = self._eps(x, self.points[i])
        return a * x + b * eps

    # -- per-kind step from node i to adjacent node j -----------------------

    def _step(self, i, j, inverse: bool):
        kind = self.kind
        x = self.x
        if kind == "ddim":
            # same scheme in both directions; never the algebraic inverse
            self.x = self._ddim_move(x, i, j)
        elif kind == "edict":
            # coefficients of the sampling step between these two nodes
            lo, hi = (j, i) if not inverse else (i, j)
            a = self.alphas[lo] / self.alphas[hi]
            b = self.sigmas[lo] - a * self.sigmas[hi]
            p = self.p
            y = self.aux["y"]
            pt = self.points[hi]
            if not inverse:
                x_inter = a * x + b * self._eps(y, pt)
                y_inter = a * y + b * self._eps(x_inter, pt)
                self.x = p * x_inter + (1 - p) * y_inter
                self.aux["y"] = p * y_inter + (1 - p) * self.x
            else:
                y_inter = (y - (1 - p) * x) / p
                x_inter = (x - (1 - p) * y_inter) / p
                y_prev = (y_inter - b * self._eps(x_inter, pt)) / a
                self.x = (x_inter - b * self._eps(y_prev, pt)) / a
                self.aux["y"] = y_prev
        elif kind in ("bdia", "obelm"):
            self._multistep(i, j, inverse)
        elif kind == "reversible-heun":
            v_i, v_j = self.var_nodes[i], self.var_nodes[j]
            s = self._to_state(x, i)
            shat = self.aux["xhat"]
            s_new, shat_new = reversible_heun_step(self._rhs, v_i, v_j, s, shat)
            self.x = self._from_state(s_new, j)
            self.aux["xhat"] = shat_new
        elif kind == "mccallum-foster":
            v_i, v_j = self.var_nodes[i], self.var_nodes[j]
            s = self._to_state(x, i)
            shat = self.aux["xhat"]
            if not inverse:
                s_new, shat_new = mccallum_foster_step(
                    self.base_tableau, self._rhs, v_i, v_j, s, shat, self.zeta)
            else:
                # invert the sampling step j -> i, i.e. unstep with roles swapped
                s_new, shat_new = mccallum_foster_unstep(
                    self.base_tableau, self._rhs, v_j, v_i, s, shat, self.zeta)
            self.x = self._from_state(s_new, j)
            self.aux["xhat"] = shat_new
        elif kind == "rex":
            self._rex(i, j, inverse)
        else:  # one-step RK / EES family
            v_i, v_j = self.var_nodes[i], self.var_nodes[j]
            s = self._to_state(x, i)
            s_new = rk_step(self.tableau, self._rhs, v_i, s, v_j - v_i)
            self.x = self._from_state(s_new, j)

    def _multistep(self, i, j, inverse):
        """BDIA and O-BELM two-step recursions with DDIM bootstrap."""
        x = self.x
        ahead = self.aux.get("ahead")
        if ahead is not None:
            # retrace a node recorded by the previous pass in the other direction
            self.aux["ahead"] = None
            self.aux["prev"] = x
            self.aux["prev_idx"] = i
            self.x = ahead
            return
        prev = self.aux.get("prev")
        if prev is None:
            # bootstrap: one DDIM step in the same variable
            if self.kind == "obelm":
                zbar = x / self.alphas[i]
                h = self.ratios[i] - self.ratios[j]
                eps = self._eps(x, self.points[i])
                self.x = self.alphas[j] * (zbar - h * eps)
            else:
                self.x = self._ddim_move(x, i, j)
            self.aux["prev"] = x
            self.aux["prev_idx"] = i
            return
        if self.kind == "bdia":
            g = self.gamma
            # one model call yields both DDIM increments from node i
            a_up = self.alphas[i + 1] / self.alphas[i]
            b_up = self.sigmas[i + 1] - a_up * self.sigmas[i]
            a_dn = self.alphas[i - 1] / self.alphas[i]
            b_dn = self.sigmas[i - 1] - a_dn * self.sigmas[i]
            eps = self._eps(x, self.points[i])
            d_up = (a_up - 1.0) * x + b_up * eps
            d_dn = (a_dn - 1.0) * x + b_dn * eps
            if not inverse:
                # prev at node i+1, producing node i-1
                self.x = prev - (1 - g) * (prev - x) - g * d_up + d_dn
            else:
                # prev at node i-1, producing node i+1
                self.x = (prev - (1 - g) * x + g * d_up - d_dn) / g
        else:  # obelm, in zbar = x / alpha over sbar = sigma / alpha
            r = self.ratios
            z = x / self.alphas[i]
            z_prev = prev / self.alphas[i + 1 if not inverse else i - 1]
            eps = self._eps(x, self.points[i])
            if not inverse:
                h_i = r[i] - r[i - 1]
                h_ip = r[i + 1] - r[i]
                a1 = (h_ip**2 - h_i**2) / h_ip**2
                a2 = h_i**2 / h_ip**2
                b1 = -(h_i + h_ip) / h_ip
                z_new = a2 * z_prev + a1 * z + b1 * h_i * eps
                self.x = self.alphas[i - 1] * z_new
            else:
                h_i = r[i] - r[i - 1]
                h_ip = r[i + 1] - r[i]
                a1 = (h_ip**2 - h_i**2) / h_ip**2
                a2 = h_i**2 / h_ip**2
                b1 = -(h_i + h_ip) / h_ip
                z_new = (z_prev - a1 * z - b1 * h_i * eps) / a2
                self.x = self.alphas[i + 1] * z_new
        self.aux["prev"] = x
        self.aux["prev_idx"] = i

    def _rex(self, i, j, inverse):
        """Lawson-wrapped reversible pair on the ratio variable."""
        tab = self.base_tableau

        def fbar(u, z):
            pt = SchedulePoint.from_lambda(-math.log(u))
            return self._eps(pt.alpha * z, pt)

        al = self.alphas
        r = self.ratios
        x, xhat = self.x, self.aux["xhat"]
        if not inverse:  # sampling: i high node, j = i - 1
            h = r[j] - r[i]
            a = al[j] / al[i]
            psi_f = rk_increment(tab, fbar, r[i], xhat / al[i], h)
            x_new = a * (self.zeta * x + (1 - self.zeta) * xhat) + al[j] * psi_f
            psi_b = rk_increment(tab, fbar, r[j], x_new / al[j], -h)
            xhat_new = a * xhat - al[j] * psi_b
            self.x, self.aux["xhat"] = x_new, xhat_new
        else:  # inversion: i low node, j = i + 1; invert the sampling step j -> i
            h = r[i] - r[j]
            a = al[i] / al[j]
            # the sampling step j -> i reads
            #   x_i    = a (zeta x_j + (1 - zeta) xhat_j) + al_i Psi_h(r_j, xhat_j/al_j)
            #   xhat_i = a xhat_j - al_i Psi_{-h}(r_i, x_i/al_i)
            psi_b = rk_increment(tab, fbar, r[i], x / al[i], -h)
            xhat_new = (xhat + al[i] * psi_b) / a
            psi_f = rk_increment(tab, fbar, r[j], xhat_new / al[j], h)
            x_new = ((x - al[i] * psi_f) / a - (1 - self.zeta) * xhat_new) / self.zeta
            self.x, self.aux["xhat"] = x_new, xhat_new

    # -- passes -------------------------------------------------------------

    def run(self, direction: str, phase: str | None = None,
            record: bool = True) -> Trajectory:
        """Traverse the whole grid in the given direction from the current node."""
        if direction not in ("sampling", "inversion"):
            raise ValueError(f"unknown direction {direction!r}")
        self._phase = phase or direction
        n = self.grid.n_steps
        if direction == "sampling":
            if self.idx != n:
                raise ValueError("sampling pass must start at the noise end")
            order = range(n, 0, -1)
            step_to = -1
        else:
            if self.idx != 0:
                raise ValueError("inversion pass must start at the data end")
            order = range(0, n)
            step_to = +1
        if self.kind in ("bdia", "obelm") and self.aux.get("prev") is not None:
            # a stored neighbour lying ahead in the new travel direction is
            # replayed as the first step rather than treated as history
            if self.aux["prev_idx"] == self.idx + step_to:
                self.aux["ahead"] = self.aux["prev"]
                self.aux["prev"] = None
                self.aux["prev_idx"] = None
        traj = Trajectory(grid_values=[self.var_nodes[self.idx]],
                          states=[self.x.copy()], solver=self.kind,
                          direction=direction)
        nfe0 = self.nfe
        for count, i in enumerate(order):
            j = i + step_to
            inverse = direction == "inversion"
            try:
                self._step(i, j, inverse)
                self._check(count, self.x, *[v for v in self.aux.values()
                                             if isinstance(v, np.ndarray)])
            except DivergenceError as exc:
                exc.step_index = count if exc.step_index is None else exc.step_index
                exc.trajectory = traj
                traj.nfe = self.nfe - nfe0
                raise
            self.idx = j
            if record:
                traj.grid_values.append(self.var_nodes[j])
                traj.states.append(self.x.copy())
        if not record:
            traj.grid_values.append(self.var_nodes[self.idx])
            traj.states.append(self.x.copy())
        traj.nfe = self.nfe - nfe0
        return traj


def evals_per_step(kind: str, base: str = "euler",
                   tableau: ButcherTableau | None = None,
                   ees_x: float | None = None) -> int:
    """Model evaluations per step, matching the compute-budget accounting."""
    if kind in ("ddim", "bdia", "obelm"):
        return 1
    if kind in ("edict", "reversible-heun"):
        return 2
    if kind in ("mccallum-foster", "rex"):
        return 2 * get_tableau(base).stages
    if kind == "ees25":
        return 3
    if kind == "ees27":
        return 4
    if kind == "rk":
        return (tableau or get_tableau("rk4")).stages
    raise ValueError(f"unknown solver kind {kind!r}")


def steps_for_budget(kind: str, nfe_budget: int, **kw) -> int:
    per = evals_per_step(kind, **kw)
    if nfe_budget % per != 0:
        raise ValueError(f"budget {nfe_budget} not divisible by {per} evals/step")
    return nfe_budget // per


def make_session(kind: str, schedule, grid, model, guidance, **params) -> SolverSession:
    return SolverSession(kind, schedule, grid, model, guidance, **params)
