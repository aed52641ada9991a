import numpy as np
import pytest

from ahglue.geometry import Geometry, build_metric, reduced_jet
from ahglue.grid import build_grid
from ahglue.operators import (InitialData, adjoint_constraints_matrix, constraint_adjoint_operator, constraint_map,
                              hyperboloidal, linearized_constraints, linearized_scalar, linearized_scalar_matrix,
                              scalar_adjoint_operator, static_ads, tau_data)


@pytest.fixture(scope="module")
def grid():
    return build_grid("annulus", (24, 24), "log", z_min=0.05)


@pytest.mark.parametrize("n", [3, 4])
def test_constraints_vanish_on_model_data(grid, n):
    hyp = build_metric("hyperbolic", n=n)
    for data in (hyperboloidal(n), static_ads(n), tau_data(hyp, 0.3)):
        c = constraint_map(data, grid)
        assert np.abs(c.J.comps).max() < 1e-10
        assert np.abs(c.matter_density).max() < 1e-10


def test_lambda_tau_relation():
    d = tau_data(build_metric("hyperbolic", n=3), 0.5)
    assert np.isclose(d.Lambda, 3 * 2 * (0.25 - 1) / 2)
    assert static_ads(4).Lambda == -6


def test_scalar_adjointness(grid):
    geo = Geometry.of(build_metric("conformal_bump", {"eps": 1e-3}, n=3), grid)
    op = scalar_adjoint_operator(geo)
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal(grid.size), rng.standard_normal(4 * grid.size)
    lhs = (op.forward(v) * geo.measure) @ u
    rhs = v @ (op.Mout @ op.adjoint(u))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_constraint_adjointness(grid):
    data = tau_data(build_metric("conformal_bump", {"eps": 1e-3}, n=3), 0.5)
    geo, Kj = data.jets(grid)
    op = constraint_adjoint_operator(geo, Kj)
    rng = np.random.default_rng(2)
    u, v = rng.standard_normal(3 * grid.size), rng.standard_normal(8 * grid.size)
    from ahglue.operators import covector_scalar_mass
    lhs = op.forward(v) @ (covector_scalar_mass(geo) @ u)
    rhs = v @ (op.Mout @ op.adjoint(u))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_static_potential_kernel_order():
    hyp = build_metric("hyperbolic", n=3)
    errs = []
    for m in (33, 65):
        g = build_grid("rect", (m, m), "none", t_range=(-1, 1), z_range=(0.3, 1.3))
        geo = Geometry.of(hyp, g)
        N = 1 / g.z
        op = scalar_adjoint_operator(geo)
        r = op.adjoint(N)
        errs.append(np.sqrt(r @ (op.Mout @ r)))
    assert np.log2(errs[0] / errs[1]) > 1.9


def test_assembled_linearization_matches_analytic(grid):
    geo = Geometry.of(build_metric("conformal_bump", {"eps": 1e-3}, n=3), grid)
    rng = np.random.default_rng(3)
    h = rng.standard_normal((4, grid.size))
    a = linearized_scalar_matrix(geo) @ h.ravel()
    b = linearized_scalar(geo, reduced_jet(h, grid, 3))
    assert np.abs(a - b).max() <= 1e-9 * np.abs(b).max()


def test_linearized_constraints_against_difference(grid):
    from ahglue.operators import constraint_difference
    data = tau_data(build_metric("hyperbolic", n=3), 0.5)
    geo, Kj = data.jets(grid)
    rng = np.random.default_rng(4)
    bump = np.exp(-((grid.s - 2.5) ** 2) * 8)
    Q = reduced_jet(bump * rng.standard_normal((4, 1)) / grid.z**2, grid, 3)
    h = reduced_jet(bump * np.array([[1.0], [0.2], [0.5], [0.7]]) / grid.z**2, grid, 3)
    errs = []
    for eps in (1e-3, 1e-4):
        J0, r0 = linearized_constraints(geo, Kj, Q.scale(eps), h.scale(eps))
        J1, r1 = constraint_difference(geo, Kj, Q.scale(eps), h.scale(eps))
        errs.append(np.abs(r1 - r0).max())
    assert 50 < errs[0] / errs[1] < 200  # quadratic remainder


def test_full_adjoint_shape(grid):
    data = hyperboloidal(3)
    geo, Kj = data.jets(grid)
    assert adjoint_constraints_matrix(geo, Kj).shape == (8 * grid.size, 3 * grid.size)
    assert isinstance(data, InitialData)
