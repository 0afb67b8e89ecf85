"""Experiment harness: convergence, round trips, reconstruction, edits, latents.

Every study produces an ExperimentReport whose rows share a fixed CSV
schema.  Cells (solver x N x g x seed) are independent; they may be
evaluated by a worker pool, and assembly sorts rows so output is identical
for any worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import Condition, FieldModel, GuidanceConfig
from .schedule import NoiseSchedule, build_grid, make_schedule
from .stepper import (DivergenceError, SolverSession, evals_per_step,
                      steps_for_budget)
from .tableau import get_tableau

__all__ = [
    "LabError",
    "StudyConfig",
    "ExperimentReport",
    "fit_slope",
    "standard_field",
    "oracle_terminal",
    "convergence_study",
    "roundtrip_study",
    "reconstruction_experiment",
    "edit_experiment",
    "latent_stats",
    "REPORT_HEADER",
    "SOLVER_VARIABLE",
]

REPORT_HEADER = "study,solver,params,variable,N,nfe,h,g,seed,metric,value,flag"

# natural grid variable for each stepping scheme
SOLVER_VARIABLE = {
    "ddim": "ratio", "edict": "ratio", "bdia": "ratio", "obelm": "ratio",
    "rex": "ratio", "reversible-heun": "t", "mccallum-foster": "t",
    "ees25": "lambda", "ees27": "lambda", "rk": "lambda",
}

REVERSIBLE_KINDS = ("edict", "bdia", "obelm", "reversible-heun",
                    "mccallum-foster", "rex")


class LabError(RuntimeError):
    """Oracle failure, unusable ladder, or malformed study setup."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class StudyConfig:
    study: str = ""
    solvers: list = dc_field(default_factory=lambda: [{"kind": "ddim"}])
    schedule_spec: dict = dc_field(default_factory=lambda: {"kind": "linear-beta"})
    field_kind: str = "rough-synthetic"
    dim: int = 8
    roughness: float = 1.0
    n_list: list | None = None
    nfe_budget: int | None = None
    guidance: list = dc_field(default_factory=lambda: [1.0])
    strength: float = 1.0
    seeds: list = dc_field(default_factory=lambda: [0])
    separations: list = dc_field(default_factory=lambda: [0.0, 1.0, 4.0, 16.0])
    edit_guidance: float = 3.0
    jobs: int = 1

    def schedule(self) -> NoiseSchedule:
        spec = dict(self.schedule_spec)
        return make_schedule(spec.pop("kind", "linear-beta"), spec)


def _cell_seed(*parts) -> int:
    """Stable 64-bit seed derived from the cell's identity."""
    key = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(),
                          "big")


def standard_field(kind: str = "rough-synthetic", dim: int = 8,
                   roughness: float = 1.0, separation: float = 0.0,
                   seed: int = 0) -> FieldModel:
    """Deterministic reference field with null/src/trg conditions.

    The target mean sits `separation` away from the source mean along a
    fixed direction, which gives edit studies a controllable difficulty.
    """
    rng = np.random.default_rng(_cell_seed("standard-field", seed, dim))
    mu = rng.normal(size=dim)
    mu /= np.linalg.norm(mu) / math.sqrt(dim)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    conds = {
        # smooth null prediction: guidance weight then scales the rough
        # component of the conditional branch linearly
        "null": Condition("null", mu=np.zeros(dim), s0=1.5, rough_amp=0.0),
        "src": Condition("src", mu=mu, s0=0.7, rough_amp=0.8, rough_freq=3.0,
                         rough_phase=0.4),
        # identical shape parameters to src: zero separation makes the two
        # conditions the same field, so edits degenerate to reconstruction
        "trg": Condition("trg", mu=mu + separation * direction, s0=0.7,
                         rough_amp=0.8, rough_freq=3.0, rough_phase=0.4),
    }
    return FieldModel(kind=kind, dim=dim, conditions=conds, roughness=roughness)


# ---------------------------------------------------------------------------
# report plumbing


def _row(study, solver, params, variable, N, nfe, h, g, seed, metric, value,
         flag=""):
    return {"study": study, "solver": solver, "params": params,
            "variable": variable, "N": N, "nfe": nfe, "h": h, "g": g,
            "seed": seed, "metric": metric, "value": value, "flag": flag}


def _params_str(spec: dict) -> str:
    items = {k: v for k, v in spec.items() if k not in ("kind", "n_list",
                                                        "variable")}
    return ";".join(f"{k}={v}" for k, v in sorted(items.items()))


@dataclass
class ExperimentReport:
    study: str
    rows: list
    slopes: dict = dc_field(default_factory=dict)

    def to_csv(self) -> str:
        lines = [REPORT_HEADER]
        for r in self.rows:
            vals = []
            for key in REPORT_HEADER.split(","):
                v = r[key]
                if isinstance(v, float):
                    vals.append(f"{v:.17g}")
                else:
                    vals.append(str(v))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def summary_json(self) -> str:
        return json.dumps({"study": self.study, "slopes": self.slopes},
                          sort_keys=True, indent=2) + "\n"

    def select(self, **kw) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in kw.items())]


def _sort_rows(rows):
    def key(r):
        return tuple(str(r[k]) for k in REPORT_HEADER.split(","))
    return sorted(rows, key=key)


def _map_cells(fn, cells, jobs):
    """Evaluate independent cells, possibly in a pool; order-stable output."""
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, cells))
    else:
        results = [fn(c) for c in cells]
    rows = [r for chunk in results for r in chunk]
    return _sort_rows(rows)


def fit_slope(hs, errs):
    """OLS slope of log(err) vs log(h) with a 2-standard-error half-width."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    keep = np.isfinite(hs) & np.isfinite(errs) & (hs > 0) & (errs > 0)
    hs, errs = hs[keep], errs[keep]
    if len(hs) < 4:
        raise LabError(f"need at least 4 usable points, have {len(hs)}")
    x = np.log(hs)
    y = np.log(errs)
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    resid = y - (ym + slope * (x - xm))
    s2 = float(np.sum(resid**2) / max(n - 2, 1))
    half_width = 2.0 * math.sqrt(s2 / sxx)
    return slope, half_width


# ---------------------------------------------------------------------------
# sessions and oracles


def _make_session(spec: dict, schedule, model, guidance, n, strength=1.0):
    spec = dict(spec)
    kind = spec.pop("kind")
    variable = spec.pop("variable", SOLVER_VARIABLE[kind])
    spec.pop("n_list", None)
    grid = build_grid(schedule, variable, n, strength)
    return SolverSession(kind, schedule, grid, model, guidance, **spec)


def _steps_for(spec: dict, n_or_budget, budget_mode):
    if not budget_mode:
        return n_or_budget
    kind = spec["kind"]
    kw = {}
    if "base" in spec:
        kw["base"] = spec["base"]
    if kind == "rk":
        kw["tableau"] = spec.get("tableau") or get_tableau("rk4")
    return steps_for_budget(kind, n_or_budget, **kw)


def oracle_terminal(schedule, model, guidance, x_start, at, h_min_lambda,
                    strength=1.0, phase="sampling", tol=1e-12):
    """RK4 reference terminal state at step h_min/100, self-checked by halving."""
    lam_lo = float(schedule.lam(schedule.t_min))
    lam_hi = float(schedule.lam(strength * schedule.T))
    span = abs(lam_lo - lam_hi)
    n = max(64, int(math.ceil(span / (h_min_lambda / 100.0))))

    def solve(steps):
        grid = build_grid(schedule, "lambda", steps, strength)
        sess = SolverSession("rk", schedule, grid, model, guidance,
                             tableau=get_tableau("rk4"))
        sess.init(np.asarray(x_start, dtype=float), at=at)
        direction = "sampling" if at == "noise" else "inversion"
        return sess.run(direction, phase=phase).terminal

    prev = solve(n)
    drift = math.inf
    for _ in range(8):  # refine until halving the step no longer matters
        n *= 2
        cur = solve(n)
        drift = float(np.max(np.abs(cur - prev)))
        if drift < tol:
            return cur
        prev = cur
    raise LabError(f"oracle not self-consistent: halving still changes the "
                   f"terminal state by {drift:.3e}")


def _grid_span(schedule, variable, strength=1.0):
    lo = schedule.value(schedule.t_min, variable)
    hi = schedule.value(strength * schedule.T, variable)
    return abs(hi - lo)


# ---------------------------------------------------------------------------
# studies


def convergence_study(config: StudyConfig) -> ExperimentReport:
    """Terminal sampling error versus a tiny-step RK4 reference."""
    schedule = config.schedule()
    model = standard_field(config.field_kind, config.dim, config.roughness,
                           seed=config.seeds[0])
    g = float(config.guidance[0])
    guidance = GuidanceConfig(g=g, source="src", target="src")
    rng = np.random.default_rng(_cell_seed("convergence", config.seeds[0]))
    x_T = rng.normal(size=config.dim)

    ladders = {}
    for spec in config.solvers:
        ladders[_label(spec)] = spec.get("n_list") or config.n_list
        if not ladders[_label(spec)]:
            raise LabError("convergence study needs an N ladder")
    lam_span = _grid_span(schedule, "lambda", config.strength)
    n_max = max(max(l) for l in ladders.values())
    ref = oracle_terminal(schedule, model, guidance, x_T, "noise",
                          lam_span / n_max, config.strength)

    cells = [(spec, n) for spec in config.solvers
             for n in ladders[_label(spec)]]

    def run(cell):
        spec, n = cell
        label = _label(spec)
        variable = spec.get("variable", SOLVER_VARIABLE[spec["kind"]])
        h = _grid_span(schedule, variable, config.strength) / n
        try:
            sess = _make_session(spec, schedule, model, guidance, n,
                                 config.strength)
            sess.init(x_T, at="noise")
            out = sess.run("sampling")
            err = float(np.linalg.norm(out.terminal - ref))
            return [_row("convergence", label, _params_str(spec), variable, n,
                         sess.nfe, h, g, config.seeds[0], "terminal-error",
                         err)]
        except DivergenceError as exc:
            return [_row("convergence", label, _params_str(spec), variable, n,
                         0, h, g, config.seeds[0], "terminal-error",
                         float("nan"), flag=f"diverged@{exc.step_index}")]

    rows = _map_cells(run, cells, config.jobs)
    report = ExperimentReport("convergence", rows)
    _fit_report_slopes(report)
    return report


def roundtrip_study(config: StudyConfig) -> ExperimentReport:
    """Inversion-then-sampling closure error per (solver, N)."""
    schedule = config.schedule()
    model = standard_field(config.field_kind, config.dim, config.roughness,
                           seed=config.seeds[0])
    g = float(config.guidance[0])
    guidance = GuidanceConfig(g=g, source="src", target="src")
    rng = np.random.default_rng(_cell_seed("roundtrip", config.seeds[0]))
    src = model.conditions["src"]
    x0 = np.asarray(src.mu) + src.s0 * rng.normal(size=config.dim)

    budget_mode = config.nfe_budget is not None
    cells = []
    for spec in config.solvers:
        if budget_mode:
            cells.append((spec, _steps_for(spec, config.nfe_budget, True)))
        else:
            for n in (spec.get("n_list") or config.n_list or []):
                cells.append((spec, n))
    if not cells:
        raise LabError("round-trip study needs an N ladder or NFE budget")

    def run(cell):
        spec, n = cell
        label = _label(spec)
        variable = spec.get("variable", SOLVER_VARIABLE[spec["kind"]])
        h = _grid_span(schedule, variable, config.strength) / n
        try:
            sess = _make_session(spec, schedule, model, guidance, n,
                                 config.strength)
            sess.init(x0, at="data")
            sess.run("inversion", phase="sampling")
            back = sess.run("sampling")
            rel = float(np.linalg.norm(back.terminal - x0)
                        / np.linalg.norm(x0))
            return [_row("roundtrip", label, _params_str(spec), variable, n,
                         sess.nfe, h, g, config.seeds[0],
                         "roundtrip-rel-error", rel)]
        except DivergenceError as exc:
            return [_row("roundtrip", label, _params_str(spec), variable, n,
                         0, h, g, config.seeds[0], "roundtrip-rel-error",
                         float("nan"), flag=f"diverged@{exc.step_index}")]

    rows = _map_cells(run, cells, config.jobs)
    report = ExperimentReport("roundtrip", rows)
    if not budget_mode:
        _fit_report_slopes(report)
    return report


def reconstruction_experiment(config: StudyConfig) -> ExperimentReport:
    """Invert and re-sample under the same condition; MSE against the input.

    Guidance weight g applies to both legs, so algebraically reversible
    solvers reconstruct exactly at every g while one-step schemes degrade
    as guidance amplifies the field's roughness.
    """
    schedule = config.schedule()
    model = standard_field(config.field_kind, config.dim, config.roughness,
                           seed=0)
    budget_mode = config.nfe_budget is not None

    cells = [(spec, float(g), int(seed)) for spec in config.solvers
             for g in config.guidance for seed in config.seeds]

    def run(cell):
        spec, g, seed = cell
        label = _label(spec)
        kind = spec["kind"]
        variable = spec.get("variable", SOLVER_VARIABLE[kind])
        n = _steps_for(spec, config.nfe_budget if budget_mode
                       else (spec.get("n_list") or config.n_list)[0],
                       budget_mode)
        h = _grid_span(schedule, variable, config.strength) / n
        guidance = GuidanceConfig(g=g, source="src", target="src")
        rng = np.random.default_rng(_cell_seed("data-draw", seed))
        src = model.conditions["src"]
        x0 = np.asarray(src.mu) + src.s0 * rng.normal(size=config.dim)
        try:
            sess = _make_session(spec, schedule, model, guidance, n,
                                 config.strength)
            sess.init(x0, at="data")
            sess.run("inversion")
            out = sess.run("sampling")
            mse = float(np.mean((out.terminal - x0) ** 2))
            return [_row("reconstruction", label, _params_str(spec), variable,
                         n, sess.nfe, h, g, seed, "mse", mse)]
        except DivergenceError as exc:
            return [_row("reconstruction", label, _params_str(spec), variable,
                         n, 0, h, g, seed, "mse", float("nan"),
                         flag=f"diverged@{exc.step_index}")]

    rows = _map_cells(run, cells, config.jobs)
    return ExperimentReport("reconstruction", rows)


def edit_experiment(config: StudyConfig) -> ExperimentReport:
    """Invert under the source condition, re-sample under a shifted target.

    The same guidance weight drives both legs, so zero separation reduces
    to the reconstruction experiment.  Deviation is measured against a
    tiny-step reference of the target flow started from the inverted state.
    """
    schedule = config.schedule()
    g = float(config.edit_guidance)
    budget_mode = config.nfe_budget is not None
    seed = int(config.seeds[0])

    cells = [(spec, float(sep)) for spec in config.solvers
             for sep in config.separations]

    def run(cell):
        spec, sep = cell
        label = _label(spec)
        kind = spec["kind"]
        variable = spec.get("variable", SOLVER_VARIABLE[kind])
        n = _steps_for(spec, config.nfe_budget if budget_mode
                       else (spec.get("n_list") or config.n_list)[0],
                       budget_mode)
        h = _grid_span(schedule, variable, 1.0) / n
        model = standard_field(config.field_kind, config.dim,
                               config.roughness, separation=sep, seed=0)
        guidance = GuidanceConfig(g=g, source="src", target="trg")
        rng = np.random.default_rng(_cell_seed("data-draw", seed))
        src = model.conditions["src"]
        x0 = np.asarray(src.mu) + src.s0 * rng.normal(size=config.dim)
        try:
            sess = _make_session(spec, schedule, model, guidance, n, 1.0)
            sess.init(x0, at="data")
            inv = sess.run("inversion")
            x_T = sess.x.copy()
            out = sess.run("sampling")
            max_norm = max(float(np.max(np.abs(s))) for s in
                           inv.states + out.states)
            lam_span = _grid_span(schedule, "lambda", 1.0)
            try:
                # stiff large-separation flows hit the roundoff floor well
                # above 1e-12; a relative 1e-9 reference is ample for the
                # O(1)-or-diverged deviations reported here
                ref = oracle_terminal(schedule, model, guidance, x_T, "noise",
                                      lam_span / n, 1.0,
                                      tol=1e-9 * max(1.0, float(np.max(np.abs(x0)))))
                dev = float(np.linalg.norm(out.terminal - ref))
            except LabError:
                dev = float("nan")
            mse = float(np.mean((out.terminal - x0) ** 2))
            return [
                _row("edit", label, _params_str(spec), variable, n, sess.nfe,
                     h, g, seed, "oracle-deviation", dev,
                     flag=f"sep={sep:g}"),
                _row("edit", label, _params_str(spec), variable, n, sess.nfe,
                     h, g, seed, "max-intermediate-norm", max_norm,
                     flag=f"sep={sep:g}"),
                _row("edit", label, _params_str(spec), variable, n, sess.nfe,
                     h, g, seed, "mse", mse, flag=f"sep={sep:g}"),
            ]
        except DivergenceError as exc:
            return [_row("edit", label, _params_str(spec), variable, n, 0, h,
                         g, seed, "oracle-deviation", float("nan"),
                         flag=f"sep={sep:g};diverged@{exc.step_index}")]

    rows = _map_cells(run, cells, config.jobs)
    return ExperimentReport("edit", rows)


def latent_stats(config: StudyConfig) -> ExperimentReport:
    """Moments of inverted terminal states against the isotropic prior."""
    schedule = config.schedule()
    model = standard_field(config.field_kind, config.dim, config.roughness,
                           seed=0)
    g = float(config.guidance[0])
    guidance = GuidanceConfig(g=g, source="src", target="src")
    budget_mode = config.nfe_budget is not None
    M = len(config.seeds)
    sigma_T = float(schedule.sigma(schedule.T))

    def run(spec):
        label = _label(spec)
        kind = spec["kind"]
        variable = spec.get("variable", SOLVER_VARIABLE[kind])
        n = _steps_for(spec, config.nfe_budget if budget_mode
                       else (spec.get("n_list") or config.n_list)[0],
                       budget_mode)
        h = _grid_span(schedule, variable, 1.0) / n
        src = model.conditions["src"]
        latents = []
        nfe = 0
        for seed in config.seeds:
            rng = np.random.default_rng(_cell_seed("latent", seed))
            x0 = np.asarray(src.mu) + src.s0 * rng.normal(size=config.dim)
            sess = _make_session(spec, schedule, model, guidance, n, 1.0)
            sess.init(x0, at="data")
            try:
                sess.run("inversion")
            except DivergenceError as exc:
                return [_row("latent", label, _params_str(spec), variable, n,
                             0, h, g, seed, "variance-ratio", float("nan"),
                             flag=f"diverged@{exc.step_index}")]
            latents.append(sess.x / sigma_T)
            nfe += sess.nfe
        Z = np.array(latents)
        flag = "degenerate-single-sample" if M == 1 else ""
        mean_norm = float(np.linalg.norm(Z.mean(axis=0)))
        if M > 1:
            var = float(np.mean(np.var(Z, axis=0, ddof=1)))
            centred = Z - Z.mean(axis=0)
            m2 = np.mean(centred**2, axis=0)
            m4 = np.mean(centred**4, axis=0)
            kurt = float(np.mean(m4 / np.maximum(m2**2, 1e-300) - 3.0))
        else:
            var = float(np.mean(Z[0] ** 2))
            kurt = float("nan")
        if not flag and not 0.5 <= var <= 2.0:
            flag = "anomalous-variance"
        seed0 = config.seeds[0]
        return [
            _row("latent", label, _params_str(spec), variable, n, nfe, h, g,
                 seed0, "mean-norm", mean_norm, flag=flag),
            _row("latent", label, _params_str(spec), variable, n, nfe, h, g,
                 seed0, "variance-ratio", var, flag=flag),
            _row("latent", label, _params_str(spec), variable, n, nfe, h, g,
                 seed0, "excess-kurtosis", kurt, flag=flag),
        ]

    rows = _map_cells(run, list(config.solvers), config.jobs)
    return ExperimentReport("latent", rows)


# ---------------------------------------------------------------------------
# helpers


def _label(spec: dict) -> str:
    kind = spec["kind"]
    extra = _params_str(spec)
    return f"{kind}[{extra}]" if extra else kind


def _fit_report_slopes(report: ExperimentReport):
    by_solver = {}
    for r in report.rows:
        if r["flag"].startswith("diverged"):
            continue
        by_solver.setdefault(r["solver"], []).append((r["h"], r["value"]))
    for solver, pts in sorted(by_solver.items()):
        if len(pts) < 4:
            continue
        hs = [p[0] for p in pts]
        es = [p[1] for p in pts]
        try:
            slope, hw = fit_slope(hs, es)
        except LabError:
            continue
        report.slopes[solver] = {"slope": slope, "half_width": hw,
                                 "n_points": len(hs)}
