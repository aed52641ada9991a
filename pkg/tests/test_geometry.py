import numpy as np
import pytest

from ahglue.errors import DegenerateMetricError
from ahglue.geometry import Geometry, build_metric, killing_fields, killing_full, scaling_pullback
from ahglue.grid import build_grid


@pytest.fixture(scope="module")
def hyp_geo():
    g = build_grid("annulus", (24, 24), "log", z_min=0.05)
    return Geometry.of(build_metric("hyperbolic", n=3), g)


def test_hyperbolic_christoffels(hyp_geo):
    z = hyp_geo.grid.z
    G = hyp_geo.gamma
    assert np.allclose(G[1, 1, 1], -1 / z)
    assert np.allclose(G[0, 0, 1], -1 / z)
    assert np.allclose(G[1, 0, 0], 1 / z)
    assert np.allclose(G[1, 2, 2], 1 / z)


@pytest.mark.parametrize("n", [3, 4])
def test_hyperbolic_curvature_closed_route(n):
    g = build_grid("annulus", (20, 20), "log", z_min=0.05)
    geo = Geometry.of(build_metric("hyperbolic", n=n), g)
    assert np.allclose(geo.scalar, -n * (n - 1), atol=1e-10)
    assert np.allclose(geo.ricci, -(n - 1) * geo.g, atol=1e-10)
    # constant sectional curvature -1: R_abcd = -(g_ac g_bd - g_ad g_bc) up to the index convention
    Rd = geo.riemann_down
    gg = np.einsum("acZ,bdZ->abcdZ", geo.g, geo.g) - np.einsum("adZ,bcZ->abcdZ", geo.g, geo.g)
    assert min(np.abs(Rd - gg).max(), np.abs(Rd + gg).max()) < 1e-9 * np.abs(gg).max()


def test_killing_fields_of_model():
    # components are linear in (t, z), so central differences are exact on a uniform grid
    g = build_grid("rect", (15, 15), "none", t_range=(-1, 1), z_range=(0.2, 1.2))
    geo = Geometry.of(build_metric("hyperbolic", n=3), g)
    for name, Y in killing_fields(g, 3).items():
        S = killing_full(geo, Y)
        assert np.abs(S).max() < 1e-9, name


def test_bump_positivity_and_pullback():
    with pytest.raises(DegenerateMetricError):
        build_metric("conformal_bump", {"eps": 0.1}, n=3)
    m = build_metric("conformal_bump", {"eps": 1e-3, "sigma": 3.0}, n=3)
    p = scaling_pullback(m, 0.5)
    assert np.isclose(p.params["eps"], 1e-3 / 8)
    h = build_metric("hyperbolic", n=3)
    assert scaling_pullback(h, 0.25) is h
