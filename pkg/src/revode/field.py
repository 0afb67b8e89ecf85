"""Conditioned noise-prediction fields with classifier-free guidance.

Analytic models (single Gaussian, Gaussian mixture, and a rough synthetic
field) expose the exact noise predictor of their marginals, so solver
accuracy can be measured against closed-form references.  A callback kind
delegates evaluation to a host-supplied function.

Evaluation points are passed as a SchedulePoint carrying (alpha, sigma,
lam); fields never need raw diffusion time, which keeps every ODE
parametrisation cheap to evaluate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

__all__ = [
    "FieldError",
    "SchedulePoint",
    "Condition",
    "FieldModel",
    "GuidanceConfig",
    "eval_eps",
    "guided_eps",
    "eps_to_x0",
    "x0_to_eps",
]

NULL_CONDITION = "null"


class FieldError(ValueError):
    """Unknown condition, bad parameters or a failed host callback."""


@dataclass(frozen=True)
class SchedulePoint:
    """Schedule state at one evaluation point."""

    alpha: float
    sigma: float
    lam: float
    t: float | None = None

    @classmethod
    def from_lambda(cls, lam: float) -> "SchedulePoint":
        a2 = 1.0 / (1.0 + math.exp(-2.0 * lam))
        return cls(alpha=math.sqrt(a2), sigma=math.sqrt(1.0 - a2), lam=lam)

    @classmethod
    def from_schedule_t(cls, schedule, t: float) -> "SchedulePoint":
        a = float(schedule.alpha(t))
        s = float(schedule.sigma(t))
        return cls(alpha=a, sigma=s, lam=math.log(a) - math.log(s), t=t)


@dataclass(frozen=True)
class Condition:
    """One conditioning label with its model-specific parameters.

    For gaussian kinds: mu (mean vector) and s0 (data standard deviation).
    For mixtures: components = [(weight, mu, s0), ...].
    For the rough synthetic kind, additionally rough_amp / rough_freq /
    rough_phase controlling the oscillatory perturbation.
    """

    id: str
    mu: np.ndarray | None = None
    s0: float = 0.0
    components: tuple = ()
    rough_amp: float = 1.0
    rough_freq: float = 3.0
    rough_phase: float = 0.0


@dataclass(frozen=True)
class FieldModel:
    kind: str  # "gaussian" | "gaussian-mixture" | "rough-synthetic" | "callback"
    dim: int = 8
    conditions: dict = dc_field(default_factory=dict)
    roughness: float = 1.0  # global scale on the oscillatory term, in [0, 1]
    callback: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "gaussian-mixture", "rough-synthetic", "callback"):
            raise FieldError(f"unknown field kind {self.kind!r}")
        if self.dim < 1:
            raise FieldError("dimension must be >= 1")
        if self.kind == "callback" and self.callback is None:
            raise FieldError("callback kind requires a callback")
        for cond in self.conditions.values():
            if self.kind == "gaussian-mixture":
                w = np.array([c[0] for c in cond.components], dtype=float)
                if len(w) == 0 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                    raise FieldError("mixture weights must be positive and sum to 1")

    def condition(self, cond_id: str) -> Condition:
        try:
            return self.conditions[cond_id]
        except KeyError:
            raise FieldError(f"unknown condition id {cond_id!r}") from None


def _gaussian_eps(x, point, mu, s0):
    v = point.alpha**2 * s0**2 + point.sigma**2
    return point.sigma * (x - point.alpha * mu) / v


def _mixture_eps(x, point, components):
    # posterior weights in log space with max subtraction
    logs = []
    pulls = []
    for w, mu, s0 in components:
        v = point.alpha**2 * float(s0) ** 2 + point.sigma**2
        r = x - point.alpha * np.asarray(mu, dtype=float)
        logs.append(math.log(w) - 0.5 * len(x) * math.log(v) - float(r @ r) / (2 * v))
        pulls.append(r / v)
    logs = np.array(logs)
    logs -= logs.max()
    w = np.exp(logs)
    w /= w.sum()
    score = -sum(wk * pk for wk, pk in zip(w, pulls))
    return -point.sigma * score


def eval_eps(model: FieldModel, x: np.ndarray, point: SchedulePoint,
             cond_id: str) -> np.ndarray:
    """Noise prediction of the model at (x, point) under one condition."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise FieldError(f"state must have shape ({model.dim},)")
    if model.kind == "callback":
        try:
            out = model.callback(x, point.lam if point.t is None else point.t, cond_id)
        except Exception as exc:  # noqa: BLE001 - context added for the host
            raise FieldError(f"host callback failed for condition {cond_id!r}: {exc}") from exc
        out = np.asarray(out, dtype=float)
        if out.shape != (model.dim,):
            raise FieldError("callback returned wrong shape")
        return out
    cond = model.condition(cond_id)
    if model.kind == "gaussian":
        return _gaussian_eps(x, point, np.asarray(cond.mu, dtype=float), cond.s0)
    if model.kind == "gaussian-mixture":
        return _mixture_eps(x, point, cond.components)
    # rough-synthetic: gaussian backbone plus an alpha-damped oscillation.
    # The alpha factor keeps the x0-predictor perturbation bounded near t = T.
    base = _gaussian_eps(x, point, np.asarray(cond.mu, dtype=float), cond.s0)
    wobble = np.sin(cond.rough_freq * x + cond.rough_phase)
    return base + model.roughness * cond.rough_amp * point.alpha * wobble


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance weight and smoothing mode."""

    g: float = 1.0
    mode: str = "plain"  # "plain" | "npi-inversion" | "proximal"
    quantile: float = 0.7
    source: str | None = None
    target: str | None = None
    null: str = NULL_CONDITION

    def __post_init__(self):
        if self.g < 0:
            raise FieldError("guidance weight must be >= 0")
        if self.mode not in ("plain", "npi-inversion", "proximal"):
            raise FieldError(f"unknown guidance mode {self.mode!r}")
        if not 0 < self.quantile < 1:
            raise FieldError("proximal quantile must lie in (0, 1)")
        if self.mode in ("npi-inversion", "proximal") and self.source is None:
            raise FieldError(f"mode {self.mode!r} requires a source condition")


def guided_eps(model: FieldModel, guidance: GuidanceConfig, x: np.ndarray,
               point: SchedulePoint, phase: str) -> np.ndarray:
    """Guided noise prediction for one phase ("inversion" or "sampling")."""
    if phase not in ("inversion", "sampling"):
        raise FieldError(f"unknown phase {phase!r}")
    g = guidance.g
    if guidance.mode == "npi-inversion":
        if phase == "inversion":
            return eval_eps(model, x, point, guidance.source)
        # sampling: plain formula with the null prediction replaced by source
        e_c = eval_eps(model, x, point, guidance.target)
        e_n = eval_eps(model, x, point, guidance.source)
        return g * e_c + (1 - g) * e_n
    if guidance.mode == "proximal" and phase == "inversion":
        # smoothing applies to the resampling pass; the inversion leg tracks
        # the source flow exactly
        return eval_eps(model, x, point, guidance.source)
    if guidance.mode == "proximal" and phase == "sampling":
        e_trg = eval_eps(model, x, point, guidance.target)
        e_src = eval_eps(model, x, point, guidance.source)
        e_null = eval_eps(model, x, point, guidance.null)
        delta = np.abs(e_trg - e_src)
        cut = np.quantile(delta, guidance.quantile)
        g_eff = np.where(delta <= cut, 1.0, g)
        return g_eff * e_trg + (1 - g_eff) * e_null
    cond = guidance.source if phase == "inversion" else guidance.target
    if cond is None:
        raise FieldError("guidance requires the phase's condition id")
    e_c = eval_eps(model, x, point, cond)
    if g == 1.0:
        return e_c
    e_n = eval_eps(model, x, point, guidance.null)
    return g * e_c + (1 - g) * e_n


def eps_to_x0(point: SchedulePoint, x: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Data prediction (x - sigma * eps) / alpha."""
    if point.sigma <= 0 or point.alpha <= 0:
        raise FieldError("conversion undefined where alpha or sigma vanishes")
    return (x - point.sigma * eps) / point.alpha


def x0_to_eps(point: SchedulePoint, x: np.ndarray, x0: np.ndarray) -> np.ndarray:
    if point.sigma <= 0 or point.alpha <= 0:
        raise FieldError("conversion undefined where alpha or sigma vanishes")
    return (x - point.alpha * x0) / point.sigma
