import numpy as np
import pytest

from ahglue.errors import GridError
from ahglue.grid import build_grid, fd_matrices_1d


@pytest.mark.parametrize("edge_order", [None, 4, "matched"])
def test_fd_exact_on_quadratics(edge_order):
    m = 11
    x = np.linspace(0, 1, m)
    d1, d2, w = fd_matrices_1d(m, edge_order=edge_order)
    f = 3 * x**2 - 2 * x + 1
    assert np.allclose(d1 @ f, 6 * x - 2, atol=1e-10)
    assert np.allclose(d2 @ f, 6.0, atol=1e-8)
    assert np.isclose(w.sum(), 1.0)


def test_matched_closure_rows():
    m = 9
    h = 1 / (m - 1)
    d1, d2, _ = fd_matrices_1d(m, edge_order="matched")
    assert np.allclose(d1[0, :5].toarray().ravel() * h, [-2.5, 5.5, -5, 2.5, -0.5])
    assert np.allclose(d1[m - 1, m - 5:].toarray().ravel() * h, [0.5, -2.5, 5, -5.5, 2.5])
    assert np.allclose(d2[0, :6].toarray().ravel() * h * h, [4, -14, 20, -15, 6, -1])


def test_matched_closure_reproduces_central_error():
    # leading error of the edge row equals h^2 f'''/6, like the central rows
    for m in (41, 81):
        h = 1 / (m - 1)
        x = np.linspace(0, 1, m)
        d1, _, _ = fd_matrices_1d(m, edge_order="matched")
        err = (d1 @ np.sin(x))[0] - np.cos(0.0)
        assert np.isclose(err / h**2, -1 / 6, rtol=0.05)


def test_second_order_convergence_mapped_grid():
    errs = []
    for m in (33, 65):
        g = build_grid("annulus", (m, m), "log", z_min=0.05)
        f = np.sin(g.t) * g.z**2
        errs.append(np.abs(g.Dz @ f - 2 * np.sin(g.t) * g.z).max())
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_grid_errors_and_masks():
    with pytest.raises(GridError):
        fd_matrices_1d(3)
    g = build_grid("rect", (8, 9), "none", t_range=(0, 1), z_range=(0.5, 1))
    assert g.size == 72
    mask = g.boundary_mask(width=1)
    assert mask.sum() == 72 - 6 * 7
    assert set(g.edge_nodes("xi0")) <= set(np.flatnonzero(mask))
    assert np.isclose(g.quad.sum(), 0.5)
