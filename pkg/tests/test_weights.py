import numpy as np
import pytest

from ahglue.errors import ConfigError
from ahglue.grid import build_grid
from ahglue.weights import WeightConfig, cutoff_chi, defining_x, phi_psi, x_of_s


def test_defaults():
    w = WeightConfig()
    assert w.a == 2 + 3 + 2
    assert w.c == 3 - 1.5
    assert WeightConfig(shifted=True).exponents() == (6.0, 1.0, 2.5)


def test_check_gluing():
    WeightConfig(b=1).check_gluing()
    with pytest.raises(ConfigError):
        WeightConfig(b=3).check_gluing()
    with pytest.raises(ConfigError):
        WeightConfig(b=1, sigma=1.5).check_gluing()


def test_defining_function_values():
    assert x_of_s(1.0) == 0 and x_of_s(4.0) == 0
    assert np.isclose(x_of_s(2.5), 0.75)
    g = build_grid("annulus", (12, 12), "log", z_min=0.05)
    df = defining_x(g)
    assert np.all(df.x >= 0)
    assert np.allclose(df.rho, np.hypot(df.x, df.z))


def test_phi_psi_formula():
    g = build_grid("rect", (8, 8), "none", t_range=(0.1, 1), z_range=(0.2, 1))
    cfg = WeightConfig(a=3, b=1, c=0.5)
    df = defining_x(g)
    phi, psi = phi_psi(df, cfg)
    assert np.allclose(phi, g.t / np.hypot(g.t, g.z))
    assert np.allclose(psi, g.t**3 * g.z * np.hypot(g.t, g.z) ** 0.5)


def test_cutoff():
    s = np.array([1.0, 2.0, 2.5, 3.0, 4.0])
    chi = cutoff_chi(s)
    assert np.allclose(chi, [0, 0, 0.5, 1, 1])
    with pytest.raises(ConfigError):
        cutoff_chi(s, 3, 2)
