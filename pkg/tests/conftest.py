import numpy as np
import pytest

from revode.field import Condition, FieldModel, GuidanceConfig
from revode.schedule import make_schedule


@pytest.fixture
def schedule():
    return make_schedule("linear-beta", {})


@pytest.fixture
def gaussian_model():
    rng = np.random.default_rng(11)
    dim = 6
    conds = {
        "null": Condition("null", mu=np.zeros(dim), s0=1.3),
        "src": Condition("src", mu=rng.normal(size=dim), s0=0.8),
    }
    return FieldModel(kind="gaussian", dim=dim, conditions=conds)


@pytest.fixture
def src_guidance():
    return GuidanceConfig(g=1.0, source="src", target="src")


def gaussian_flow(schedule, cond, x, t_from, t_to):
    """Closed-form probability-flow transport of a Gaussian marginal.

    The flow moves each point along a fixed quantile of the marginal
    N(alpha mu, alpha^2 s0^2 + sigma^2), so the whitened offset is conserved.
    """
    mu = np.asarray(cond.mu, dtype=float)

    def std(t):
        a, s = float(schedule.alpha(t)), float(schedule.sigma(t))
        return a, np.sqrt(a * a * cond.s0**2 + s * s)

    a0, w0 = std(t_from)
    a1, w1 = std(t_to)
    return a1 * mu + w1 * (x - a0 * mu) / w0
