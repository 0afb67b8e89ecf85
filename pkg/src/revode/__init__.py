"""Numerical laboratory for reversible and near-reversible diffusion ODE solvers."""

from .schedule import (NoiseSchedule, TimeGrid, ScheduleError, make_schedule,
                       reparametrize, build_grid, alpha_from_lambda,
                       sigma_from_lambda)
from .field import (FieldModel, Condition, GuidanceConfig, SchedulePoint,
                    FieldError, eval_eps, guided_eps, eps_to_x0, x0_to_eps)
from .tableau import (ButcherTableau, StabilityPolynomial, TableauError,
                      ees25_tableau, ees27_tableau, classical_tableaux,
                      get_tableau, stability_polynomial)
from .stepper import (SolverSession, OdeFormulation, Trajectory,
                      DivergenceError, make_session, rk_step, evals_per_step,
                      steps_for_budget, SOLVER_KINDS)

__version__ = "0.1.0"
