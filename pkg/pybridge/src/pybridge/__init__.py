"""Host bindings for the revode solver kernels.

The boundary carries flat contiguous float buffers, scalars and strings
only: a host supplies a noise-prediction callback
``(x: (d,) array, t_or_lambda: float, condition_id: str) -> (d,) array``
and drives any native stepper through :func:`run`.  Callbacks execute on
the caller's thread, sessions share no state, and host exceptions come
back as :class:`BridgeError` carrying the solver step index where they
fired.
"""

from __future__ import annotations

import numpy as np

from revode.field import FieldError, FieldModel, GuidanceConfig
from revode.schedule import build_grid, make_schedule
from revode.stepper import SOLVER_KINDS, DivergenceError, SolverSession
from revode.tableau import get_tableau

__all__ = ["BridgeError", "bind_field", "run", "schedules", "tableaux"]

__version__ = "0.1.0"

_DIRECTIONS = ("sampling", "inversion", "roundtrip")


class BridgeError(RuntimeError):
    """Failure surfaced across the binding boundary.

    step_index is the zero-based step of the traversal during which the
    failure occurred, or None when it happened before stepping began.
    """

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


def bind_field(callback, d: int, batch: bool = False) -> FieldModel:
    """Wrap a host noise predictor as a field the native kernels can call.

    The batch flag is declarative only: the native steppers always submit
    one state vector at a time, so batched hosts simply see d-vectors.
    """
    if not callable(callback):
        raise BridgeError("callback must be callable")
    if int(d) < 1:
        raise BridgeError("field dimension must be >= 1")

    def shim(x, t_or_lam, cond_id):
        out = np.asarray(callback(np.ascontiguousarray(x, dtype=float),
                                  float(t_or_lam), str(cond_id)),
                         dtype=float).reshape(-1)
        return out

    shim.batch = bool(batch)
    return FieldModel(kind="callback", dim=int(d), callback=shim)


def schedules() -> tuple:
    """Schedule kinds accepted in a schedule spec."""
    return ("linear-beta", "cosine", "discrete")


def tableaux(name: str, x: float | None = None, sign: str = "+") -> dict:
    """Butcher arrays for one method, as plain nested lists and scalars."""
    tab = get_tableau(name, x=x, sign=sign)
    return {
        "label": tab.label,
        "A": tab.A.tolist(),
        "b": tab.b.tolist(),
        "c": tab.c.tolist(),
        "order": tab.order,
        "anti_order": tab.anti_order,
    }


def _completed_steps(sess, start_idx):
    return abs(sess.idx - start_idx)


def run(solver_kind: str, params: dict | None, schedule_spec: dict,
        grid_spec: dict, x0, direction: str = "sampling"):
    """Drive one native stepper end to end with a bound field.

    params must contain "field" (a model from bind_field) and may carry
    solver parameters (p, gamma, zeta, base, ees_x), a "condition" id
    (default "null") and a "guidance" weight (default 1).  Returns
    (grid_values, states, nfe) as flat numpy buffers plus a scalar;
    direction "roundtrip" chains inversion and resampling in one session.
    """
    params = dict(params or {})
    if solver_kind not in SOLVER_KINDS:
        raise BridgeError(f"unknown solver kind {solver_kind!r}")
    if direction not in _DIRECTIONS:
        raise BridgeError(f"direction must be one of {_DIRECTIONS}")

    model = params.pop("field", None)
    if not isinstance(model, FieldModel):
        raise BridgeError("params['field'] must come from bind_field")
    cond = str(params.pop("condition", "null"))
    g = float(params.pop("guidance", 1.0))
    guidance = GuidanceConfig(g=g, source=cond, target=cond, null=cond)

    spec = dict(schedule_spec or {})
    try:
        schedule = make_schedule(spec.pop("kind", "linear-beta"), spec)
        gspec = dict(grid_spec or {})
        grid = build_grid(schedule, gspec.pop("variable", "lambda"),
                          int(gspec.pop("n_steps", 16)),
                          float(gspec.pop("strength", 1.0)))
        if gspec:
            raise BridgeError(f"unknown grid keys: {sorted(gspec)}")
        sess = SolverSession(solver_kind, schedule, grid, model, guidance,
                             **params)
    except BridgeError:
        raise
    except (ValueError, TypeError) as exc:
        raise BridgeError(str(exc)) from exc

    x0 = np.ascontiguousarray(x0, dtype=float).reshape(-1)
    if x0.shape != (model.dim,):
        raise BridgeError(f"x0 must have shape ({model.dim},)")

    legs = [direction] if direction != "roundtrip" else ["inversion",
                                                         "sampling"]
    sess.init(x0, at="noise" if legs[0] == "sampling" else "data")

    grid_values: list = []
    states: list = []
    for leg in legs:
        start_idx = sess.idx
        try:
            traj = sess.run(leg, phase="sampling")
        except DivergenceError as exc:
            raise BridgeError(f"solver diverged at step {exc.step_index}: "
                              f"{exc}", step_index=exc.step_index) from exc
        except FieldError as exc:
            step = _completed_steps(sess, start_idx)
            raise BridgeError(f"host callback failed at step {step}: {exc}",
                              step_index=step) from exc
        skip = 1 if grid_values else 0  # legs share the turning node
        grid_values.extend(traj.grid_values[skip:])
        states.extend(traj.states[skip:])

    return (np.asarray(grid_values, dtype=float),
            np.asarray(states, dtype=float), int(sess.nfe))
