import numpy as np
import pytest
import scipy.sparse as sp

from ahglue.errors import AssemblyError, ConfigError
from ahglue.inequalities import (EXACT_IDENTITIES, REGISTRY, IdentityCase, QuadraticFormPair, combination_leading_defect,
                                 corner_constant, korn_admissible, lemma_algebra_defect, rayleigh_min,
                                 remainder_rates, sharp_stripe_constant, stripe_constants, stripe_model_1d,
                                 verify_identity)
from ahglue.weights import WeightConfig


def _laplace_1d(m):
    h = 1 / (m + 1)
    A = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / h
    B = sp.diags(np.full(m, h))
    return A.tocsr(), B.tocsr()


def test_rayleigh_unit_interval():
    A, B = _laplace_1d(400)
    r = rayleigh_min(QuadraticFormPair(A, B))
    assert r.converged
    assert np.isclose(r.value, np.pi**2, rtol=1e-4)
    assert np.isclose(QuadraticFormPair(A, B).quotient(r.vector), r.value, rtol=1e-6)


def test_rayleigh_rejects_bad_forms():
    A, B = _laplace_1d(20)
    with pytest.raises(AssemblyError):
        rayleigh_min(QuadraticFormPair(A + sp.eye(20, k=1), B))
    with pytest.raises(AssemblyError):
        rayleigh_min(QuadraticFormPair(A, -B))
    with pytest.raises(AssemblyError):
        QuadraticFormPair(A, B[:10, :10])


def test_free_mask_restricts():
    A, B = _laplace_1d(50)
    free = np.ones(50, dtype=bool)
    free[25:] = False  # Dirichlet at node 26 (x = 26 h): an interval of length 26 / 51
    r = rayleigh_min(QuadraticFormPair(A, B, free))
    assert np.isclose(r.value, (np.pi * 51 / 26) ** 2, rtol=5e-3)


@pytest.mark.parametrize("b", [0.0, 2.0])
def test_hardy_sharp_constant(b):
    val = rayleigh_min(stripe_model_1d(b, 3)).value
    assert abs(val - sharp_stripe_constant(b, 3)) <= 0.1 * sharp_stripe_constant(b, 3)


def test_hardy_collapse_at_excluded_weight():
    assert rayleigh_min(stripe_model_1d(1.0, 3)).value < 0.1


def test_korn_admissibility_rule():
    assert korn_admissible(0.0, 0.0, 3)
    assert not korn_admissible(1.0, 0.0, 3)
    assert not korn_admissible(2.0, 0.0, 3)
    assert not korn_admissible(0.0, -3.0, 3)


def test_corner_kato_direction():
    # |nabla |Y|| <= |nabla Y| makes the covector constant at least the scalar one
    cfg = WeightConfig(a=10, b=0.0, c=0.0)
    kw = dict(z_depth=8.0, resolution=(24, 32))
    scalar = corner_constant("poincare", cfg, **kw).value
    tensor = corner_constant("poincare_tensor", cfg, **kw).value
    assert tensor >= scalar - 1e-6


def test_vertical_stripe_poincare():
    cfg = WeightConfig(b=0.0)
    r = stripe_constants("poincare_vertical", cfg)
    assert r.converged and r.constant > 0.5


def test_unknown_identity():
    with pytest.raises(ConfigError):
        verify_identity(IdentityCase("nope"))


@pytest.mark.parametrize("name", [m for m in REGISTRY if m not in EXACT_IDENTITIES])
def test_lemma_integrands_are_exact_divergences(name):
    assert lemma_algebra_defect(IdentityCase(name)) < 1e-12


def test_combination_leading_term():
    assert combination_leading_defect() < 1e-12


def test_zero_fields_trivially_pass():
    rep = verify_identity(IdentityCase("14VI14.5", zero=True), resolutions=(17, 33, 65))
    assert rep.passed and max(rep.errors) == 0


def test_identity_order_small_ladder():
    rep = verify_identity(IdentityCase("7VIII14.1", seed=1), resolutions=(33, 65, 129))
    assert rep.min_order >= 1.9


def test_fault_injection_fails_gate():
    rep = verify_identity(IdentityCase("14VI14.5"), resolutions=(33, 65, 129), fault="stencil")
    assert not rep.passed and rep.min_order < 1.5


def test_remainders_vanish_on_thin_stripes():
    r = remainder_rates("26X15.1")
    assert r["slope"] > 0.5
    assert r["ratios"][-1] < r["ratios"][0]
