import numpy as np
import pytest

from ahglue.errors import ConfigError, InsufficientDataError
from ahglue.geometry import build_metric
from ahglue.grid import build_grid
from ahglue.operators import InitialData
from ahglue.solver import (GluingProblem, decay_fit, expected_decay, glue_scalar, interpolate, maskit_assemble)
from ahglue.weights import WeightConfig, defining_x


@pytest.fixture(scope="module")
def grid():
    return build_grid("annulus", (40, 40), "log", z_min=0.02)


def test_decay_fit_recovers_synthetic_exponents():
    g = build_grid("annulus", (64, 64), "log", z_min=0.005)
    df = defining_x(g)
    px, pz, pr = decay_fit(df.x**3.5 * df.z**1.25, df)
    assert np.isclose(px, 3.5, atol=1e-8)
    assert np.isclose(pz, 1.25, atol=1e-8)
    assert abs(pr) < 0.02  # the diagonal band 0.8 <= x/z <= 1.25 has finite width
    # the strips use rho ~ z (resp. rho ~ x), so a rho factor is only resolved approximately
    px, pz, pr = decay_fit(df.x**3.5 * df.z**1.25 * df.rho**-0.5, df)
    assert abs(px - 3.5) < 0.05 and abs(pz - 1.25) < 0.05 and abs(pr + 0.5) < 0.1


def test_decay_fit_needs_points():
    g = build_grid("annulus", (8, 8), "log", z_min=0.2)
    df = defining_x(g)
    with pytest.raises(InsufficientDataError):
        decay_fit(np.ones(g.size), df)


def test_expected_decay():
    assert expected_decay(WeightConfig(b=1)) == (7 - 1.5 + 2, 1.0, 1.5 + 1.5 - 2)


def test_identical_metrics_give_zero_h(grid):
    hyp = build_metric("hyperbolic", n=3)
    it = interpolate(hyp, hyp, grid)
    assert np.abs(it.source).max() == 0
    h, rep = glue_scalar(GluingProblem(hyp, hyp, WeightConfig(b=1), grid))
    assert rep.converged
    assert np.abs(h.comps).max() == 0


def test_glue_scalar_converges_and_stays_inside(grid):
    hyp = build_metric("hyperbolic", n=3)
    bump = build_metric("conformal_bump", {"eps": 1e-3, "sigma": 3.0}, n=3)
    h, rep = glue_scalar(GluingProblem(hyp, bump, WeightConfig(b=1), grid))
    assert rep.converged and rep.iterations <= 20
    assert rep.residual_history[-1] <= 1e-8
    assert rep.extra["outside_max"] == 0.0
    assert 0 < rep.h_norm < 10 * rep.source_norm


def test_problem_validation(grid):
    hyp = build_metric("hyperbolic", n=3)
    with pytest.raises(ConfigError):
        GluingProblem(hyp, hyp, WeightConfig(b=3), grid)
    with pytest.raises(ConfigError):
        GluingProblem(hyp, hyp, WeightConfig(b=1), build_grid("rect", (8, 8), "none", t_range=(0, 1), z_range=(0.5, 1)))


def test_maskit_hyperbolic_inputs():
    hyp = build_metric("hyperbolic", n=3)
    d = InitialData(hyp, tau=1.0)
    glued, rep = maskit_assemble(d, d, 0.5)
    assert rep["neck_deviation"] == 0.0
    assert max(rep["neck_J"], rep["neck_rho"]) < 1e-8
    with pytest.raises(ConfigError):
        maskit_assemble(d, InitialData(hyp, tau=0.5), 0.5)
