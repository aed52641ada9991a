import numpy as np
import pytest

from ahglue.errors import ConfigError
from ahglue.fields import ReducedVector
from ahglue.geometry import Geometry, build_metric
from ahglue.grid import build_grid
from ahglue.kids import (KidCandidate, exact_static_kids, kernel_test, kid_residual, second_derivative_matrix,
                         static_kid_convergence, static_residual, z_growth_exponent)
from ahglue.operators import hyperboloidal, static_ads, tau_data
from ahglue.weights import WeightConfig


@pytest.fixture(scope="module")
def rect():
    return build_grid("rect", (33, 33), "none", t_range=(-1, 1), z_range=(0.25, 1.25))


def test_zero_candidate_has_zero_residuals(rect):
    cand = KidCandidate(np.zeros(rect.size), ReducedVector(np.zeros((2, rect.size)), 3, covariant=True))
    res = kid_residual(hyperboloidal(3), cand, rect)
    geo, _ = hyperboloidal(3).jets(rect)
    assert all(v == 0 for v in res.norms(geo).values())


def test_candidate_validation(rect):
    with pytest.raises(ConfigError):
        KidCandidate(np.ones(rect.size), lam=0.0)
    with pytest.raises(ConfigError):
        KidCandidate(np.ones(rect.size), ReducedVector(np.zeros((2, rect.size)), 3, transverse_rate=1.0))


def _residual_ladder(data, make, resolutions=(65, 129)):
    out = []
    for m in resolutions:
        g = build_grid("rect", (m, m), "none", t_range=(-1, 1), z_range=(0.25, 1.25))
        geo, _ = data.jets(g)
        out.append(kid_residual(data, make(g), g).norms(geo))
    return out


def test_static_lapse_residuals_are_second_order():
    # K = 0, N = 1/z: the tensor and trace equations hold exactly in the continuum
    r = _residual_ladder(static_ads(3), lambda g: KidCandidate(1 / g.z))
    for key in ("hessian", "trace"):
        assert np.log2(r[0][key] / r[1][key]) > 1.7


def test_translation_is_killing_on_static_slice():
    # Y = d_t lowered: Y_t = 1/z^2; its second-derivative identity holds
    make = lambda g: KidCandidate(np.zeros(g.size),
                                  ReducedVector(np.array([1 / g.z**2, 0 * g.z]), 3, covariant=True))
    r = _residual_ladder(static_ads(3), make)
    for key in ("killing", "second_derivative"):
        assert np.log2(r[0][key] / r[1][key]) > 1.7


def test_boost_pair_on_hyperboloidal_data():
    # K = g: N = 1/z with Y = dN solves nabla_(i Y_j) = N g
    make = lambda g: KidCandidate(1 / g.z, ReducedVector(np.array([0 * g.z, -1 / g.z**2]), 3, covariant=True))
    r = _residual_ladder(hyperboloidal(3), make)
    for key in ("killing", "hessian", "trace", "second_derivative"):
        assert np.log2(r[0][key] / r[1][key]) > 1.7, key


def test_second_derivative_matrix_matches_pointwise():
    g = build_grid("annulus", (20, 20), "log", z_min=0.05)
    data = tau_data(build_metric("conformal_bump", {"eps": 0.01}, n=3), 0.5)
    geo, Kj = data.jets(g)
    rng = np.random.default_rng(0)
    Y, N = rng.standard_normal((2, g.size)), rng.standard_normal(g.size)
    ref = kid_residual(data, KidCandidate(N, ReducedVector(Y, 3, covariant=True)), g).second_derivative
    got = (second_derivative_matrix(geo, Kj) @ np.concatenate([Y[0], Y[1], N])).reshape(ref.shape)
    assert np.abs(got - ref).max() <= 1e-12 * np.abs(ref).max()


def test_catalog_entries_satisfy_hess_n_equals_n_g():
    conv = static_kid_convergence(3, (33, 65, 129), combination={"1/z": 1.0, "t/z": -0.5,
                                                                  "(1-t^2-z^2)/(2z)": 2.0})
    assert set(conv) == set(exact_static_kids(3)) | {"combination"}
    for name, row in conv.items():
        assert row["min_order"] >= 1.9, name


def test_transverse_term_is_needed():
    g = build_grid("rect", (65, 65), "none", t_range=(-1, 1), z_range=(0.25, 1.25))
    geo = Geometry.of(build_metric("hyperbolic", n=3), g)
    kid = exact_static_kids(3)["(1+t^2+z^2)/(2z)"]
    N, q = kid.N(g.t, g.z), kid.q(g.t, g.z)
    inner = ~g.boundary_mask(width=2)
    with_q = np.abs(static_residual(geo, N, q)[:, inner]).max()
    without = np.abs(static_residual(geo, N)[:, inner]).max()
    assert without > 10 * with_q  # O(1) continuum defect against O(h^2)


@pytest.mark.parametrize("name", ["1/z", "t/z", "(1+t^2+z^2)/(2z)", "(1-t^2-z^2)/(2z)"])
def test_catalog_grows_like_inverse_z(name):
    g = build_grid("annulus", (48, 48), "log", z_min=0.01)
    kid = exact_static_kids(3)[name]
    N = kid.N(g.t, g.z)
    keep = np.abs(N) * g.z > 0.05  # avoid the zero set of the numerator
    assert abs(z_growth_exponent(np.where(keep, N, 0.0), g, z_max=0.1) + 1) < 0.05


def test_kernel_trend_bounded_for_admissible_weight():
    r = kernel_test(static_ads(3), WeightConfig(b=1.0))
    assert r.bounded_below and r.variation < 0.2


def test_kernel_trend_collapses_when_inverse_z_admitted():
    r = kernel_test(static_ads(3), WeightConfig(b=3.0))
    assert not r.bounded_below
    assert r.values[-1] < 0.25 * r.values[0]


def test_kernel_value_monotone_in_weight():
    vals = [kernel_test(static_ads(3), WeightConfig(b=b)).values[-1] for b in (0.0, 1.0, 2.0, 3.0)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))


def test_unweighted_space_contains_kids():
    unw = kernel_test(static_ads(3), WeightConfig(b=1.0), weighted=False).values
    w = kernel_test(static_ads(3), WeightConfig(b=1.0)).values
    assert unw[-1] < 0.05 * w[-1]
    assert unw[-1] < unw[0]


def test_kernel_test_validation():
    with pytest.raises(ConfigError):
        kernel_test(static_ads(3), WeightConfig(), ladder=())
    with pytest.raises(ConfigError):
        kernel_test(static_ads(3), WeightConfig(), ladder=(((4, 4), 0.1),))
    with pytest.raises(ConfigError):
        kernel_test(static_ads(3), WeightConfig(), system="other")
