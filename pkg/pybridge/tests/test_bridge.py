import numpy as np
import pytest
from numpy.testing import assert_allclose

import pybridge
from pybridge import BridgeError, bind_field, run, schedules, tableaux

from revode.field import Condition, FieldModel, GuidanceConfig
from revode.schedule import build_grid, make_schedule
from revode.stepper import SolverSession

DIM = 6

SOLVERS = [
    ("ddim", {}),
    ("edict", {"p": 0.93}),
    ("bdia", {"gamma": 0.96}),
    ("obelm", {}),
    ("reversible-heun", {}),
    ("mccallum-foster", {"base": "euler", "zeta": 0.999}),
    ("rex", {"base": "euler", "zeta": 0.999}),
    ("ees25", {}),
    ("ees27", {}),
    ("rk", {}),
]

GRID_VARIABLE = {"ddim": "ratio", "edict": "ratio", "bdia": "ratio",
                 "obelm": "ratio", "rex": "ratio", "reversible-heun": "t",
                 "mccallum-foster": "t", "ees25": "lambda", "ees27": "lambda",
                 "rk": "lambda"}

MU = np.linspace(-1.0, 1.0, DIM)
S0 = 0.8


def gaussian_eps(x, lam, cond_id):
    """Host-side copy of the analytic gaussian noise predictor."""
    a2 = 1.0 / (1.0 + np.exp(-2.0 * lam))
    alpha, sigma = np.sqrt(a2), np.sqrt(1.0 - a2)
    v = a2 * S0**2 + sigma**2
    return sigma * (x - alpha * MU) / v


def native_model():
    return FieldModel(kind="gaussian", dim=DIM,
                      conditions={"null": Condition("null", mu=MU, s0=S0)})


def native_trajectory(kind, params, n, direction):
    schedule = make_schedule("linear-beta", {})
    grid = build_grid(schedule, GRID_VARIABLE[kind], n)
    guidance = GuidanceConfig(g=1.0, source="null", target="null")
    sess = SolverSession(kind, schedule, grid, native_model(), guidance,
                         **params)
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=DIM)
    sess.init(x0, at="noise" if direction == "sampling" else "data")
    traj = sess.run(direction, phase="sampling")
    return x0, traj


# ---------------------------------------------------------------------------
# parity with the native engine


@pytest.mark.parametrize("kind,params", SOLVERS)
@pytest.mark.parametrize("direction", ["sampling", "inversion"])
def test_callback_runs_match_native_at_every_step(kind, params, direction):
    n = 16
    x0, native = native_trajectory(kind, params, n, direction)
    field = bind_field(gaussian_eps, DIM)
    grid_values, states, nfe = run(
        kind, {"field": field, **params}, {"kind": "linear-beta"},
        {"variable": GRID_VARIABLE[kind], "n_steps": n}, x0, direction)
    assert states.shape == (n + 1, DIM)
    assert nfe == native.nfe
    assert_allclose(grid_values, native.grid_values, rtol=1e-14)
    for step, (ours, theirs) in enumerate(zip(states, native.states)):
        scale = max(1.0, float(np.linalg.norm(theirs)))
        err = float(np.linalg.norm(ours - theirs)) / scale
        assert err <= 1e-12, f"{kind} {direction} step {step}: {err}"


def test_zero_callback_reduces_ddim_to_alpha_rescaling():
    field = bind_field(lambda x, lam, cond: np.zeros_like(x), DIM)
    n = 8
    x_T = np.full(DIM, 2.0)
    grid_values, states, _ = run("ddim", {"field": field},
                                 {"kind": "linear-beta"},
                                 {"variable": "ratio", "n_steps": n},
                                 x_T, "sampling")
    schedule = make_schedule("linear-beta", {})
    grid = build_grid(schedule, "ratio", n)
    alphas = grid.alphas()[::-1]  # traversal order: noise -> data
    expect = (alphas / alphas[0])[:, None] * x_T[None, :]
    assert_allclose(states, expect, rtol=1e-13)


def test_edict_roundtrip_through_bindings():
    field = bind_field(gaussian_eps, DIM)
    x0 = MU + 0.3
    grid_values, states, nfe = run(
        "edict", {"field": field, "p": 0.93}, {"kind": "linear-beta"},
        {"variable": "ratio", "n_steps": 24}, x0, "roundtrip")
    assert len(states) == 2 * 24 + 1
    rel = np.linalg.norm(states[-1] - x0) / np.linalg.norm(x0)
    assert rel <= 1e-9
    assert nfe == 2 * 24 * 2


# ---------------------------------------------------------------------------
# error propagation


def test_host_exception_carries_step_index():
    calls = {"n": 0}

    def flaky(x, lam, cond):
        if calls["n"] == 3:
            raise RuntimeError("host model crashed")
        calls["n"] += 1
        return np.zeros_like(x)

    field = bind_field(flaky, DIM)
    with pytest.raises(BridgeError) as info:
        run("ddim", {"field": field}, {"kind": "linear-beta"},
            {"variable": "ratio", "n_steps": 8}, np.ones(DIM), "sampling")
    assert info.value.step_index == 3
    assert "host model crashed" in str(info.value)


def test_nonfinite_callback_surfaces_as_divergence():
    def nan_after(x, lam, cond):
        return np.where(lam < 0, np.nan, 0.0) * np.ones_like(x)

    field = bind_field(nan_after, DIM)
    with pytest.raises(BridgeError) as info:
        run("ees25", {"field": field}, {"kind": "linear-beta"},
            {"variable": "lambda", "n_steps": 8}, np.ones(DIM), "inversion")
    assert info.value.step_index is not None


def test_invalid_inputs_are_structured_errors():
    field = bind_field(gaussian_eps, DIM)
    good = dict(params={"field": field}, schedule_spec={"kind": "linear-beta"},
                grid_spec={"variable": "ratio", "n_steps": 4},
                x0=np.ones(DIM))
    with pytest.raises(BridgeError, match="solver kind"):
        run("leapfrog", **good, direction="sampling")
    with pytest.raises(BridgeError, match="direction"):
        run("ddim", **good, direction="upward")
    with pytest.raises(BridgeError, match="bind_field"):
        run("ddim", {}, {"kind": "linear-beta"}, {"n_steps": 4}, np.ones(DIM))
    with pytest.raises(BridgeError, match="shape"):
        run("ddim", {"field": field}, {"kind": "linear-beta"},
            {"n_steps": 4}, np.ones(DIM + 2))
    with pytest.raises(BridgeError, match="grid"):
        run("ddim", {"field": field}, {"kind": "linear-beta"},
            {"n_steps": 4, "warp": 2}, np.ones(DIM))
    with pytest.raises(BridgeError):
        bind_field(42, DIM)
    with pytest.raises(BridgeError):
        bind_field(gaussian_eps, 0)


# ---------------------------------------------------------------------------
# no state leaks


def test_interleaved_sessions_match_sequential_runs():
    shift = {"a": 0.0, "b": 1.0}

    def make_cb(key):
        return lambda x, lam, cond: gaussian_eps(x + shift[key], lam, cond)

    args = lambda key: (("ees25",
                         {"field": bind_field(make_cb(key), DIM)},
                         {"kind": "linear-beta"},
                         {"variable": "lambda", "n_steps": 12},
                         np.ones(DIM), "sampling"))
    alone_a = run(*args("a"))
    alone_b = run(*args("b"))
    # interleave fresh sessions in the opposite order
    mixed_b = run(*args("b"))
    mixed_a = run(*args("a"))
    assert_allclose(mixed_a[1], alone_a[1], rtol=0, atol=0)
    assert_allclose(mixed_b[1], alone_b[1], rtol=0, atol=0)
    assert not np.allclose(alone_a[1], alone_b[1])


# ---------------------------------------------------------------------------
# exported metadata


def test_schedules_and_tableaux_are_plain_data():
    assert "linear-beta" in schedules()
    tab = tableaux("ees25")
    assert isinstance(tab["A"], list) and isinstance(tab["b"][0], float)
    assert tab["order"] == 2 and tab["anti_order"] == 5
    assert_allclose(tab["b"], [0.1, 0.5, 0.4])
    with pytest.raises(Exception):
        tableaux("secret-method")
    assert pybridge.__version__
