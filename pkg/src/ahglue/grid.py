"""Graded tensor-product grids and sparse finite-difference operators.

Every grid is the image of the uniform computational square
``(xi, eta) in [0, 1]^2`` under a smooth map to the half-plane
coordinates ``(t, z)``.  Physical derivative operators are assembled from
one-dimensional stencils by the chain rule, including the second
derivatives of the inverse map, so that they stay second-order accurate on
curvilinear (polar) and graded grids alike.

Node ordering is row-major in ``(i, j)``: node ``i * n_eta + j`` sits at
``(xi_i, eta_j)``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GridError

MIN_NODES = 5


# ----------------------------------------------------------------------------
# one-dimensional building blocks
# ----------------------------------------------------------------------------

def fd_matrices_1d(m, order=2, edge_order=None):
    """First/second derivative matrices and trapezoid weights on ``linspace(0, 1, m)``.

    ``order=2``: interior rows are central (3-point, compact for the second
    derivative); the two edge rows use one-sided stencils of ``edge_order``:
    2 (default), 4, or ``"matched"`` (second order, with the same leading
    error term as the central rows, so that the error field stays smooth up
    to the edge and integrals of derivatives converge like
    ``A h^2 + O(h^4)``).
    ``order=4``: five-point central rows with fourth-order one-sided rows
    next to the edges.
    """
    if m < MIN_NODES:
        raise GridError(f"need at least {MIN_NODES} nodes per direction, got {m}")
    h = 1.0 / (m - 1)
    if order == 4:
        return _fd_matrices_1d_4(m, h)
    if order != 2:
        raise GridError(f"unsupported stencil order {order}")
    d1 = sp.lil_matrix((m, m))
    d2 = sp.lil_matrix((m, m))
    for i in range(1, m - 1):
        d1[i, i - 1], d1[i, i + 1] = -0.5 / h, 0.5 / h
        d2[i, i - 1], d2[i, i], d2[i, i + 1] = 1 / h**2, -2 / h**2, 1 / h**2
    if (edge_order or 2) == 4:
        e1 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * h)
        e2 = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / (12 * h * h)
        d1[0, :5], d1[m - 1, m - 5:] = e1, -e1[::-1]
        d2[0, :6], d2[m - 1, m - 6:] = e2, e2[::-1]
    elif edge_order == "matched":
        # one-sided rows whose truncation error reproduces the central one
        # (h^2 f^(3) / 6 and h^2 f^(4) / 12) up to O(h^4)
        e1 = np.array([-2.5, 5.5, -5.0, 2.5, -0.5]) / h
        e2 = np.array([4.0, -14.0, 20.0, -15.0, 6.0, -1.0]) / (h * h)
        d1[0, :5], d1[m - 1, m - 5:] = e1, -e1[::-1]
        d2[0, :6], d2[m - 1, m - 6:] = e2, e2[::-1]
    elif (edge_order or 2) == 2:
        d1[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
        d1[m - 1, m - 3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
        d2[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
        d2[m - 1, m - 4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
    else:
        raise GridError(f"unsupported edge stencil order {edge_order}")
    w = np.full(m, h)
    w[0] = w[-1] = 0.5 * h
    return d1.tocsr(), d2.tocsr(), w


def _fd_matrices_1d_4(m, h):
    if m < 7:
        raise GridError("fourth-order stencils need at least 7 nodes per direction")
    d1 = sp.lil_matrix((m, m))
    d2 = sp.lil_matrix((m, m))
    c1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * h)
    c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12 * h * h)
    for i in range(2, m - 2):
        d1[i, i - 2:i + 3] = c1
        d2[i, i - 2:i + 3] = c2
    e1 = [np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * h),
          np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12 * h)]
    e2 = [np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / (12 * h * h),
          np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / (12 * h * h)]
    for r in range(2):
        d1[r, :5] = e1[r]
        d1[m - 1 - r, m - 5:] = -e1[r][::-1]
        d2[r, :6] = e2[r]
        d2[m - 1 - r, m - 6:] = e2[r][::-1]
    w = np.full(m, h)
    w[0] = w[-1] = 0.5 * h
    return d1.tocsr(), d2.tocsr(), w


@dataclass(frozen=True)
class AxisMap:
    """A smooth monotone map from ``[0, 1]`` onto ``[lo, hi]``.

    kind:
        ``uniform``  affine map;
        ``log``      geometric spacing (``lo > 0``);
        ``cluster``  ``lo + (hi-lo)(u - gamma sin(2 pi u)/(2 pi))``, which
                     refines both ends by the factor ``1 - gamma``;
        ``tanlog``   for angles: uniform in ``log tan(alpha/2)``, i.e.
                     geometric clustering toward both ``lo`` and ``pi - lo``.
    """

    kind: str
    lo: float
    hi: float
    gamma: float = 0.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise GridError(f"axis bounds must increase: {self.lo} >= {self.hi}")
        if self.kind == "log" and self.lo <= 0:
            raise GridError("log axis needs a positive lower bound")
        if self.kind == "cluster" and not 0.0 <= self.gamma < 1.0:
            raise GridError("cluster parameter gamma must lie in [0, 1)")
        if self.kind not in ("uniform", "log", "cluster", "tanlog"):
            raise GridError(f"unknown axis kind {self.kind!r}")

    def __call__(self, u):
        """Return ``(x, dx/du, d2x/du2)`` at computational points ``u``."""
        u = np.asarray(u, dtype=float)
        lo, hi = self.lo, self.hi
        if self.kind == "uniform":
            return lo + (hi - lo) * u, np.full_like(u, hi - lo), np.zeros_like(u)
        if self.kind == "log":
            ell = np.log(hi / lo)
            x = lo * np.exp(ell * u)
            return x, ell * x, ell**2 * x
        if self.kind == "cluster":
            g = self.gamma
            two_pi = 2 * np.pi
            x = lo + (hi - lo) * (u - g * np.sin(two_pi * u) / two_pi)
            dx = (hi - lo) * (1 - g * np.cos(two_pi * u))
            ddx = (hi - lo) * g * two_pi * np.sin(two_pi * u)
            return x, dx, ddx
        # tanlog: alpha = 2 arctan(exp(zeta)), zeta affine in u, symmetric about pi/2
        zmax = -np.log(np.tan(lo / 2))
        zeta = -zmax + 2 * zmax * u
        a = 2 * np.arctan(np.exp(zeta))
        da = np.sin(a) * 2 * zmax
        dda = np.sin(a) * np.cos(a) * (2 * zmax) ** 2
        return a, da, dda


# ----------------------------------------------------------------------------
# the grid
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid:
    """A mapped two-dimensional grid with sparse derivative operators.

    Attributes
    ----------
    kind : ``"annulus"`` (polar coordinates ``t = s cos a, z = s sin a``) or
        ``"rect"`` (``t``, ``z`` mapped independently).
    shape : ``(n_xi, n_eta)``.
    t, z : flattened node coordinates.
    s, alpha : polar coordinates for annulus grids (``None`` otherwise).
    Dt, Dz, Dtt, Dtz, Dzz : sparse physical derivative operators.
    quad : trapezoid weights for ``dt dz`` (Jacobian included).
    z_min : the truncation height requested at construction.
    """

    kind: str
    shape: tuple
    xi: np.ndarray
    eta: np.ndarray
    t: np.ndarray
    z: np.ndarray
    s: np.ndarray
    alpha: np.ndarray
    Dt: sp.csr_matrix
    Dz: sp.csr_matrix
    Dtt: sp.csr_matrix
    Dtz: sp.csr_matrix
    Dzz: sp.csr_matrix
    quad: np.ndarray
    jac: np.ndarray
    z_min: float
    maps: tuple = field(default=())

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    def grid2d(self, f):
        """Reshape a flat node field to ``shape``."""
        return np.asarray(f).reshape(self.shape)

    def d(self, f):
        """First partials of node fields: result has a new leading axis ``(t, z)``."""
        f = np.asarray(f)
        flat = f.reshape(-1, self.size)
        out = np.stack([(self.Dt @ flat.T).T, (self.Dz @ flat.T).T])
        return out.reshape((2,) + f.shape)

    def dd(self, f):
        """Second partials (compact stencils): two new leading axes ``(t, z)``."""
        f = np.asarray(f)
        flat = f.reshape(-1, self.size)
        tt = (self.Dtt @ flat.T).T
        tz = (self.Dtz @ flat.T).T
        zz = (self.Dzz @ flat.T).T
        out = np.stack([np.stack([tt, tz]), np.stack([tz, zz])])
        return out.reshape((2, 2) + f.shape)

    def edge_index_distance(self):
        """Per node: index distance to the nearest xi-edge and eta-edge."""
        n1, n2 = self.shape
        i = np.arange(n1)[:, None] * np.ones((1, n2), dtype=int)
        j = np.ones((n1, 1), dtype=int) * np.arange(n2)[None, :]
        di = np.minimum(i, n1 - 1 - i).ravel()
        dj = np.minimum(j, n2 - 1 - j).ravel()
        return di, dj

    def boundary_mask(self, width=2, edges=("xi0", "xi1", "eta0", "eta1")):
        """Boolean mask of the ``width`` outermost rows on the named edges."""
        n1, n2 = self.shape
        i = np.repeat(np.arange(n1), n2)
        j = np.tile(np.arange(n2), n1)
        mask = np.zeros(self.size, dtype=bool)
        if "xi0" in edges:
            mask |= i < width
        if "xi1" in edges:
            mask |= i > n1 - 1 - width
        if "eta0" in edges:
            mask |= j < width
        if "eta1" in edges:
            mask |= j > n2 - 1 - width
        return mask

    def edge_nodes(self, edge):
        """Flat node indices along one edge, ordered by the running index."""
        n1, n2 = self.shape
        idx = np.arange(self.size).reshape(self.shape)
        return {"xi0": idx[0, :], "xi1": idx[-1, :],
                "eta0": idx[:, 0], "eta1": idx[:, -1]}[edge]


def _mapped_operators(shape, X, dX, ddX, order=2, edge_order=None):
    """Chain-rule assembly of physical derivative operators.

    X, dX, ddX hold the map ``(t, z)`` and its computational derivatives:
    ``dX[d][a]`` is ``dX^d / dxi^a`` and ``ddX[d][a][b]`` the second derivatives.
    """
    n1, n2 = shape
    d1x, d2x, wx = fd_matrices_1d(n1, order, edge_order)
    d1y, d2y, wy = fd_matrices_1d(n2, order, edge_order)
    ix, iy = sp.identity(n1, format="csr"), sp.identity(n2, format="csr")
    Da = [sp.kron(d1x, iy, format="csr"), sp.kron(ix, d1y, format="csr")]
    Dab = [[sp.kron(d2x, iy, format="csr"), sp.kron(d1x, d1y, format="csr")], [None, sp.kron(ix, d2y, format="csr")]]
    Dab[1][0] = Dab[0][1]

    J = np.array([[dX[0][0], dX[0][1]], [dX[1][0], dX[1][1]]])  # J[d, a]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if np.any(det == 0):
        raise GridError("singular grid map")
    K = np.empty_like(J)  # K[a, i] = d xi^a / d x^i
    K[0, 0], K[0, 1] = J[1, 1] / det, -J[0, 1] / det
    K[1, 0], K[1, 1] = -J[1, 0] / det, J[0, 0] / det
    H = np.array(ddX)  # H[d, b, c]
    # d2 xi^a / dx^i dx^j = - K[a,d] H[d,b,c] K[b,i] K[c,j]
    second = -np.einsum("ad...,dbc...,bi...,cj...->aij...", K, H, K, K)

    def first(i):
        return sp.diags(K[0, i]) @ Da[0] + sp.diags(K[1, i]) @ Da[1]

    def sec(i, j):
        op = sp.diags(second[0, i, j]) @ Da[0] + sp.diags(second[1, i, j]) @ Da[1]
        for b in range(2):
            for c in range(2):
                op = op + sp.diags(K[b, i] * K[c, j]) @ Dab[b][c]
        return op.tocsr()

    quad = np.outer(wx, wy).ravel() * np.abs(det)
    return first(0).tocsr(), first(1).tocsr(), sec(0, 0), sec(0, 1), sec(1, 1), quad, det


def build_grid(kind="annulus", resolution=(64, 64), grading="log", z_min=0.02,
               s_range=(1.0, 4.0), t_range=(-1.0, 1.0), z_range=None, gamma=0.5,
               t_grading="none", stencil_order=2, edge_order=None):
    """Build an annulus or rectangle grid.

    Parameters
    ----------
    kind : ``"annulus"`` for the half annulus ``1 <= s <= 4`` in polar
        coordinates, ``"rect"`` for a coordinate rectangle.
    resolution : ``(N1, N2)`` nodes along the first (``s`` or ``t``) and second
        (``alpha`` or ``z``) directions.
    grading : ``"none"`` for uniform computational spacing; ``"log"`` for
        geometric grading toward ``z -> 0`` (and end-clustering in ``s``, where
        ``x -> 0``).  For rectangles, ``"log"`` grades ``z`` geometrically.
    z_min : truncation height.  On the annulus the angular range is
        ``[alpha_min, pi - alpha_min]`` with ``sin(alpha_min) = z_min / s_in``.
    t_grading : rectangles only; ``"log"`` grades ``t`` geometrically toward
        ``t_range[0] > 0`` (corner models, where ``t`` plays the role of ``x``).
    stencil_order : 2 (default) or 4, the accuracy of the derivative operators.
    edge_order : accuracy of the one-sided edge rows (defaults to ``stencil_order``).
    """
    n1, n2 = resolution
    if min(n1, n2) < MIN_NODES:
        raise GridError(f"need at least {MIN_NODES} nodes per direction")
    xi = np.linspace(0.0, 1.0, n1)
    eta = np.linspace(0.0, 1.0, n2)
    if kind == "annulus":
        s_in, s_out = s_range
        if not 0 < z_min < s_in:
            raise GridError("z_min must lie in (0, s_in)")
        a_min = np.arcsin(z_min / s_in)
        smap = AxisMap("cluster" if grading == "log" else "uniform", s_in, s_out, gamma if grading == "log" else 0.0)
        amap = AxisMap("tanlog" if grading == "log" else "uniform", a_min, np.pi - a_min)
        S, dS, ddS = smap(xi)
        A, dA, ddA = amap(eta)
        S2, A2 = np.meshgrid(S, A, indexing="ij")
        dS2, dA2 = np.meshgrid(dS, dA, indexing="ij")
        ddS2, ddA2 = np.meshgrid(ddS, ddA, indexing="ij")
        c, s_ = np.cos(A2), np.sin(A2)
        t = S2 * c
        z = S2 * s_
        dX = [[dS2 * c, -S2 * s_ * dA2], [dS2 * s_, S2 * c * dA2]]
        ddX = [
            [[ddS2 * c, -dS2 * s_ * dA2], [-dS2 * s_ * dA2, -S2 * (ddA2 * s_ + dA2**2 * c)]],
            [[ddS2 * s_, dS2 * c * dA2], [dS2 * c * dA2, S2 * (ddA2 * c - dA2**2 * s_)]],
        ]
        maps = (smap, amap)
        s_flat, a_flat = S2.ravel(), A2.ravel()
    elif kind == "rect":
        zr = z_range if z_range is not None else (z_min, 1.0)
        if zr[0] <= 0:
            raise GridError("rectangle must lie in z > 0")
        tmap = AxisMap("log" if t_grading == "log" else "uniform", *t_range)
        zmap = AxisMap("log" if grading == "log" else "uniform", *zr)
        T, dT, ddT = tmap(xi)
        Z, dZ, ddZ = zmap(eta)
        T2, Z2 = np.meshgrid(T, Z, indexing="ij")
        dT2, dZ2 = np.meshgrid(dT, dZ, indexing="ij")
        ddT2, ddZ2 = np.meshgrid(ddT, ddZ, indexing="ij")
        zero = np.zeros_like(T2)
        t, z = T2, Z2
        dX = [[dT2, zero], [zero, dZ2]]
        ddX = [[[ddT2, zero], [zero, zero]], [[zero, zero], [zero, ddZ2]]]
        maps = (tmap, zmap)
        s_flat = a_flat = None
        z_min = zr[0]
    else:
        raise GridError(f"unknown grid kind {kind!r}")
    flat = lambda a: np.asarray(a).ravel()
    dXf = [[flat(dX[d][a]) for a in range(2)] for d in range(2)]
    ddXf = [[[flat(ddX[d][a][b]) for b in range(2)] for a in range(2)] for d in range(2)]
    Dt, Dz, Dtt, Dtz, Dzz, quad, det = _mapped_operators((n1, n2), None, dXf, ddXf, stencil_order, edge_order)
    zf = flat(z)
    if np.any(zf < z_min * (1 - 1e-12)):
        raise GridError("inconsistent truncation: nodes below z_min")
    return Grid(kind=kind, shape=(n1, n2), xi=xi, eta=eta, t=flat(t), z=zf,
                s=s_flat, alpha=a_flat, Dt=Dt, Dz=Dz, Dtt=Dtt, Dtz=Dtz, Dzz=Dzz,
                quad=quad, jac=det, z_min=float(z_min), maps=maps)
