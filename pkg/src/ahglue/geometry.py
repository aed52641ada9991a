"""Half-space AH geometry under planar symmetry.

Metrics are written ``g = z^{-2} g_tilde`` on ``{z > 0}``.  Curvature is
computed from a *jet* ``(g, dg, ddg)`` of coordinate components and their
first and second partials, obtained in one of three ways:

``closed``
    analytic derivatives of a catalog ``g_tilde`` (exact up to round-off);
``tilde``
    finite differences of sampled ``g_tilde`` with the conformal factor
    ``z^{-2}`` differentiated analytically (default for sampled metrics);
``full``
    finite differences of the sampled components of ``g`` itself.

Array conventions: index axes first, node axis last; derivative indices
precede tensor indices, ``dg[k, i, j] = d_k g_ij`` and
``dGam[m, k, i, j] = d_m Gamma^k_ij``.  The Riemann tensor is stored as
``Riem[a, b, c, d] = R_abc^d`` with

    R_abc^d = d_b Gamma^d_ac - d_a Gamma^d_bc + Gamma^e_ac Gamma^d_be - Gamma^e_bc Gamma^d_ae,

so that ``Ric_ac = R_abc^b`` and the hyperbolic metric has ``Ric = -(n-1) g``.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DegenerateMetricError, GridError, NoMassError, OverlapError
from .fields import ReducedSymTensor, ReducedVector, check_positive, sym_full, sym_reduce

CATALOG = ("hyperbolic", "conformal_bump", "transverse_bump", "sampled")


# ----------------------------------------------------------------------------
# bump profiles
# ----------------------------------------------------------------------------

def _profile(kind, width, t):
    """Return ``(b, b', b'')`` for the bump profile in ``t``."""
    if kind == "flat":
        one = np.ones_like(t)
        return one, 0 * one, 0 * one
    if kind == "gaussian":
        u = t / width
        b = np.exp(-u * u)
        return b, -2 * u / width * b, (4 * u * u - 2) / width**2 * b
    raise ConfigError(f"unknown bump profile {kind!r}")


# ----------------------------------------------------------------------------
# metric specification
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetricSpec:
    """An AH metric ``g = z^{-2} g_tilde`` in half-space coordinates.

    Catalog entries carry closed forms; other metrics carry either a
    ``sampler(t, z) -> (4, N)`` for ``g_tilde`` or node ``samples`` on a fixed
    grid.  ``sigma`` is the rate of approach to the hyperbolic metric.
    ``slice_only`` marks pullbacks that are valid on the plane ``y = 0`` but
    not planar symmetric; such metrics can be sampled but not differentiated.
    """

    catalog_id: str
    n: int
    params: dict = field(default_factory=dict)
    sigma: Optional[float] = None
    sampler: Optional[Callable] = None
    samples: Optional[ReducedSymTensor] = None
    grid: object = None
    slice_only: bool = False

    @property
    def is_closed_form(self):
        return self.catalog_id in ("hyperbolic", "conformal_bump", "transverse_bump")

    def tilde(self, t, z):
        """Components ``(tt, tz, zz, perp)`` of ``g_tilde`` at points ``(t, z)``."""
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.is_closed_form:
            return tilde_jet(self, t, z)[0]
        if self.sampler is not None:
            return np.asarray(self.sampler(t, z), dtype=float)
        raise ConfigError("sampled metric can only be evaluated on its own grid")

    def tilde_on(self, grid):
        if self.samples is not None:
            if grid is not self.grid:
                raise GridError("sampled metric lives on a different grid")
            return self.samples.comps
        return self.tilde(grid.t, grid.z)


def build_metric(catalog_id, params=None, n=3, positivity_radius=4.0):
    """Construct a catalog metric.

    ``conformal_bump``: ``g_tilde = (1 + eps z^sigma b(t)) * identity``, params
    ``eps``, ``sigma``, ``profile`` (``gaussian``/``flat``), ``width``.
    ``transverse_bump``: ``g_tilde_perp = 1 + m z^p``, params ``m``, ``p``.
    ``sampled``: params ``samples`` (a ReducedSymTensor of ``g_tilde``),
    ``grid`` and optional ``sigma``.

    Positivity is checked on ``0 < z <= positivity_radius``.
    """
    params = dict(params or {})
    if n < 3:
        raise ConfigError("n must be at least 3")
    if catalog_id == "hyperbolic":
        return MetricSpec("hyperbolic", n, {}, sigma=np.inf)
    if catalog_id == "conformal_bump":
        eps = float(params.get("eps", 0.0))
        sigma = float(params.get("sigma", 3.0))
        prof = params.get("profile", "gaussian")
        width = float(params.get("width", 1.0))
        if sigma <= 0:
            raise ConfigError("decay rate sigma must be positive")
        _profile(prof, width, np.zeros(1))
        if 1 - abs(eps) * positivity_radius**sigma <= 0:
            raise DegenerateMetricError("bump amplitude makes g_tilde non-positive")
        return MetricSpec("conformal_bump", n, dict(eps=eps, sigma=sigma, profile=prof, width=width), sigma=sigma)
    if catalog_id == "transverse_bump":
        m = float(params.get("m", 0.0))
        p = float(params.get("p", n))
        if p <= 0:
            raise ConfigError("decay rate p must be positive")
        if 1 - abs(m) * positivity_radius**p <= 0:
            raise DegenerateMetricError("bump amplitude makes g_tilde non-positive")
        return MetricSpec("transverse_bump", n, dict(m=m, p=p), sigma=p)
    if catalog_id == "sampled":
        samples = params.get("samples")
        grid = params.get("grid")
        if samples is None or grid is None:
            raise ConfigError("sampled metric needs samples and grid")
        check_positive(samples.comps)
        return MetricSpec("sampled", n, {}, sigma=params.get("sigma"), samples=samples, grid=grid)
    raise ConfigError(f"unknown catalog id {catalog_id!r}")


def tilde_jet(metric, t, z):
    """Closed-form ``g_tilde`` components with first and second partials.

    Returns ``(c, dc, ddc)`` with shapes ``(4, N)``, ``(2, 4, N)``, ``(2, 2, 4, N)``;
    derivative axes are ``(t, z)``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    t, z = np.broadcast_arrays(t, z)
    N = t.shape
    c = np.zeros((4,) + N)
    dc = np.zeros((2, 4) + N)
    ddc = np.zeros((2, 2, 4) + N)
    c[0] = c[2] = c[3] = 1.0
    p = metric.params
    if metric.catalog_id == "conformal_bump":
        eps, sig = p["eps"], p["sigma"]
        b, b1, b2 = _profile(p["profile"], p["width"], t)
        zs = z**sig
        f = eps * zs * b
        ft = eps * zs * b1
        fz = eps * sig * z ** (sig - 1) * b
        ftt = eps * zs * b2
        ftz = eps * sig * z ** (sig - 1) * b1
        fzz = eps * sig * (sig - 1) * z ** (sig - 2) * b
        for k in (0, 2, 3):
            c[k] += f
            dc[0, k], dc[1, k] = ft, fz
            ddc[0, 0, k], ddc[0, 1, k], ddc[1, 0, k], ddc[1, 1, k] = ftt, ftz, ftz, fzz
    elif metric.catalog_id == "transverse_bump":
        m, q = p["m"], p["p"]
        c[3] += m * z**q
        dc[1, 3] = m * q * z ** (q - 1)
        ddc[1, 1, 3] = m * q * (q - 1) * z ** (q - 2)
    elif metric.catalog_id != "hyperbolic":
        raise ConfigError("closed-form jet only for catalog metrics")
    return c, dc, ddc


# ----------------------------------------------------------------------------
# jets
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Jet:
    """Coordinate components of a symmetric tensor with first and second partials."""

    g: np.ndarray
    dg: np.ndarray
    ddg: np.ndarray

    @property
    def n(self):
        return self.g.shape[0]

    def __add__(self, other):
        return Jet(self.g + other.g, self.dg + other.dg, self.ddg + other.ddg)

    def scale(self, a):
        return Jet(a * self.g, a * self.dg, a * self.ddg)


def _expand_jet(c, dc, ddc, n):
    """Reduced component jet -> full index arrays (transverse partials vanish)."""
    N = c.shape[-1]
    g = sym_full(c, n)
    dg = np.zeros((n, n, n, N))
    ddg = np.zeros((n, n, n, n, N))
    for k in range(2):
        dg[k] = sym_full(dc[k], n)
        for m in range(2):
            ddg[k, m] = sym_full(ddc[k, m], n)
    return Jet(g, dg, ddg)


def reduced_jet(comps, grid, n):
    """Finite-difference jet of a reduced symmetric tensor sampled on ``grid``."""
    comps = np.asarray(comps)
    return _expand_jet(comps, grid.d(comps), grid.dd(comps), n)


def conformal_jet(tj, z):
    """Jet of ``z^{-2} g_tilde`` from the jet ``tj`` of ``g_tilde`` (product rule)."""
    n = tj.n
    f, fz, fzz = z**-2, -2 * z**-3, 6 * z**-4
    g = f * tj.g
    dg = f * tj.dg
    dg[1] += fz * tj.g
    ddg = f * tj.ddg
    for k in range(n):
        ddg[k, 1] += fz * tj.dg[k]
        ddg[1, k] += fz * tj.dg[k]
    ddg[1, 1] += fzz * tj.g
    return Jet(g, dg, ddg)


def metric_jet(metric, grid, route="auto"):
    """Jet of ``g`` at the nodes of ``grid`` by the requested route."""
    if metric.slice_only:
        raise ConfigError("metric is only valid on a slice; it cannot be differentiated")
    if route == "auto":
        route = "closed" if metric.is_closed_form else "tilde"
    n = metric.n
    if route == "closed":
        if not metric.is_closed_form:
            raise ConfigError("closed route needs a catalog metric")
        tj = _expand_jet(*tilde_jet(metric, grid.t, grid.z), n)
        return conformal_jet(tj, grid.z)
    comps = metric.tilde_on(grid)
    if route == "tilde":
        return conformal_jet(reduced_jet(comps, grid, n), grid.z)
    if route == "full":
        return reduced_jet(comps * grid.z**-2, grid, n)
    raise ConfigError(f"unknown differentiation route {route!r}")


# ----------------------------------------------------------------------------
# tensor calculus
# ----------------------------------------------------------------------------

LETTERS = "abcdefgh"


def inverse(g):
    """Pointwise inverse of ``(n, n, N)`` arrays."""
    gm = np.moveaxis(g, -1, 0)
    return np.moveaxis(np.linalg.inv(gm), 0, -1)


def _slot_terms(T, Gam, lead):
    """Sum over slots of ``Gamma^l_{lead a_s} T_{.. l ..}``; result indices ``lead + slots``."""
    r = T.ndim - 1
    idx = LETTERS[:r]
    out = 0
    for s in range(r):
        tin = idx[:s] + "l" + idx[s + 1:]
        out = out + np.einsum(f"l{lead}{idx[s]}Z,{tin}Z->{lead}{idx}Z", Gam, T)
    return out


def nabla(T, dT, Gam):
    """Covariant derivative of a covariant tensor; derivative index first."""
    return dT - _slot_terms(T, Gam, "k")


def nabla2(T, dT, ddT, Gam, dGam):
    """Second covariant derivative ``nabla_i nabla_j T`` of a covariant tensor."""
    r = T.ndim - 1
    idx = LETTERS[:r]
    # d_i (nabla_j T) = dd_ij T - sum_s (d_i Gamma^l_{j a_s} T_l + Gamma^l_{j a_s} d_i T_l)
    dnab = ddT.copy()
    for s in range(r):
        tin = idx[:s] + "l" + idx[s + 1:]
        dnab -= np.einsum(f"ilj{idx[s]}Z,{tin}Z->ij{idx}Z", dGam, T)
        dnab -= np.einsum(f"lj{idx[s]}Z,i{tin}Z->ij{idx}Z", Gam, dT)
    nab = nabla(T, dT, Gam)
    out = dnab - np.einsum(f"lijZ,l{idx}Z->ij{idx}Z", Gam, nab)
    for s in range(r):
        tin = idx[:s] + "l" + idx[s + 1:]
        out -= np.einsum(f"li{idx[s]}Z,j{tin}Z->ij{idx}Z", Gam, nab)
    return out


def christoffel_from_jet(jet):
    """``(A, Gam1, Gam, dA, dGam)``: inverse, Christoffels of both kinds and partials."""
    A = inverse(jet.g)
    dg, ddg = jet.dg, jet.ddg
    # first kind Gamma_{l, ij} = (d_i g_jl + d_j g_il - d_l g_ij) / 2
    G1 = 0.5 * (np.einsum("ijlZ->lijZ", dg) + np.einsum("jilZ->lijZ", dg) - dg)
    Gam = np.einsum("klZ,lijZ->kijZ", A, G1)
    dG1 = 0.5 * (np.einsum("mijlZ->mlijZ", ddg) + np.einsum("mjilZ->mlijZ", ddg) - ddg)
    dA = -np.einsum("kaZ,mabZ,blZ->mklZ", A, dg, A)
    dGam = np.einsum("mklZ,lijZ->mkijZ", dA, G1) + np.einsum("klZ,mlijZ->mkijZ", A, dG1)
    return A, G1, Gam, dA, dGam


def riemann(Gam, dGam):
    """``R_abc^d`` from Christoffels and their partials."""
    return (np.einsum("bdacZ->abcdZ", dGam) - np.einsum("adbcZ->abcdZ", dGam)
            + np.einsum("eacZ,dbeZ->abcdZ", Gam, Gam) - np.einsum("ebcZ,daeZ->abcdZ", Gam, Gam))


class Geometry:
    """Derived geometric quantities of a metric jet (lazily cached)."""

    def __init__(self, jet, grid=None):
        self.jet = jet
        self.grid = grid
        self.n = jet.n
        det = np.linalg.det(np.moveaxis(jet.g, -1, 0))
        if np.any(det <= 0) or np.any(jet.g[0, 0] <= 0):
            raise DegenerateMetricError("metric jet is not positive definite")
        self.sqrt_det = np.sqrt(det)

    @classmethod
    def of(cls, metric, grid, route="auto"):
        return cls(metric_jet(metric, grid, route), grid)

    @cached_property
    def _chr(self):
        return christoffel_from_jet(self.jet)

    @property
    def g(self):
        return self.jet.g

    @property
    def ginv(self):
        return self._chr[0]

    @property
    def gamma(self):
        return self._chr[2]

    @property
    def dgamma(self):
        return self._chr[4]

    @property
    def dginv(self):
        return self._chr[3]

    @cached_property
    def riemann(self):
        return riemann(self.gamma, self.dgamma)

    @cached_property
    def ricci(self):
        return np.einsum("abcbZ->acZ", self.riemann)

    @cached_property
    def scalar(self):
        return np.einsum("acZ,acZ->Z", self.ginv, self.ricci)

    @cached_property
    def riemann_down(self):
        """``R_abcd = R_abc^e g_ed``."""
        return np.einsum("abceZ,edZ->abcdZ", self.riemann, self.g)

    @property
    def measure(self):
        """Node weights of ``dmu_g`` (transverse volume 1)."""
        return self.grid.quad * self.sqrt_det

    def raise1(self, Y):
        return np.einsum("ijZ,jZ->iZ", self.ginv, Y)

    def lower1(self, Y):
        return np.einsum("ijZ,jZ->iZ", self.g, Y)

    def inner2(self, h, k):
        """Pointwise ``<h, k>_g`` for covariant 2-tensors."""
        A = self.ginv
        return np.einsum("acZ,bdZ,abZ,cdZ->Z", A, A, h, k)

    def trace(self, h):
        return np.einsum("ijZ,ijZ->Z", self.ginv, h)

    def d(self, f):
        """Partials of node fields padded with zero transverse partials."""
        df = self.grid.d(f)
        out = np.zeros((self.n,) + df.shape[1:])
        out[:2] = df
        return out

    def dd(self, f):
        ddf = self.grid.dd(f)
        out = np.zeros((self.n, self.n) + ddf.shape[2:])
        out[:2, :2] = ddf
        return out

    def hessian(self, f):
        """``nabla nabla f`` of a scalar node field."""
        return self.dd(f) - np.einsum("kijZ,kZ->ijZ", self.gamma, self.d(f))

    def laplacian(self, f):
        return self.trace(self.hessian(f))

    def nabla(self, T):
        return nabla(T, self.d(T), self.gamma)

    def nabla2(self, T):
        return nabla2(T, self.d(T), self.dd(T), self.gamma, self.dgamma)

    def divergence(self, X):
        """``nabla_i X^i`` of a contravariant vector field."""
        dX = self.d(X)
        return np.einsum("iiZ->Z", dX) + np.einsum("iikZ,kZ->Z", self.gamma, X)


# ----------------------------------------------------------------------------
# curvature differences without cancellation
# ----------------------------------------------------------------------------

def connection_difference(geo, hjet, linear=False):
    """Difference of Levi-Civita connections ``C = Gamma(g+h) - Gamma(g)`` and its partials.

    Returns ``(Ap, dAp, C, dC)`` with ``Ap`` the inverse of ``g + h``.  The
    formula only involves ``h`` and its derivatives, so no large quantities
    cancel.  ``linear=True`` returns the first-order parts (``Ap = g^{-1}``).
    """
    A, Gam, dGam = geo.ginv, geo.gamma, geo.dgamma
    h, dh, ddh = hjet.g, hjet.dg, hjet.ddg
    # E_{l,ij} = Gamma_{l,ij}(g+h) - Gamma_{l,ij}(g) - h_lm Gamma^m_ij
    H1 = 0.5 * (np.einsum("ijlZ->lijZ", dh) + np.einsum("jilZ->lijZ", dh) - dh)
    E = H1 - np.einsum("lmZ,mijZ->lijZ", h, Gam)
    dH1 = 0.5 * (np.einsum("mijlZ->mlijZ", ddh) + np.einsum("mjilZ->mlijZ", ddh) - ddh)
    dE = dH1 - np.einsum("mlpZ,pijZ->mlijZ", dh, Gam) - np.einsum("lpZ,mpijZ->mlijZ", h, dGam)
    if linear:
        Ap, dAp = A, geo.dginv
    else:
        Ap = inverse(geo.g + h)
        dAp = -np.einsum("kaZ,mabZ,blZ->mklZ", Ap, geo.jet.dg + dh, Ap)
    C = np.einsum("klZ,lijZ->kijZ", Ap, E)
    dC = np.einsum("mklZ,lijZ->mkijZ", dAp, E) + np.einsum("klZ,mlijZ->mkijZ", Ap, dE)
    return Ap, dAp, C, dC


def scalar_difference(geo, hjet, linear=False):
    """``R(g + h) - R(g)`` evaluated without forming ``R(g + h)``.

    The Ricci difference is ``d_k C^k_ij - d_j C^k_ik`` plus products with
    ``Gamma`` and ``C``.  ``linear=True`` drops every term of order two or
    higher in ``h``: the result is the linearized scalar curvature ``P_g h``.
    """
    A, Gam, Ric = geo.ginv, geo.gamma, geo.ricci
    h = hjet.g
    Ap, _, C, dC = connection_difference(geo, hjet, linear)
    dRic = (np.einsum("bbacZ->acZ", dC) - np.einsum("abbcZ->acZ", dC)
            + np.einsum("eacZ,bbeZ->acZ", C, Gam) + np.einsum("eacZ,bbeZ->acZ", Gam, C)
            - np.einsum("ebcZ,baeZ->acZ", C, Gam) - np.einsum("ebcZ,baeZ->acZ", Gam, C))
    if not linear:
        dRic = dRic + np.einsum("eacZ,bbeZ->acZ", C, C) - np.einsum("ebcZ,baeZ->acZ", C, C)
    # R' - R = A'^{ac} dRic_ac + (A' - A)^{ac} Ric_ac,  A' - A = -A' h A
    dA = -np.einsum("iaZ,abZ,bjZ->ijZ", Ap, h, A)
    return np.einsum("acZ,acZ->Z", Ap, dRic) + np.einsum("acZ,acZ->Z", dA, Ric)


# ----------------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------------

def christoffels(metric, grid, route="auto"):
    """Full ``Gamma^k_ij`` arrays at the nodes of ``grid``."""
    return Geometry.of(metric, grid, route).gamma


def christoffel_table(metric, t, z):
    """Nonzero Christoffel symbols at one point, keyed like ``"z_zz"`` for ``Gamma^z_zz``.

    Uses the closed-form jet, so it is exact for catalog metrics.
    """
    n = metric.n
    tj = _expand_jet(*tilde_jet(metric, [t], [z]), n)
    jet = conformal_jet(tj, np.array([z], dtype=float))
    det = np.linalg.det(jet.g[..., 0])
    if det <= 0:
        raise DegenerateMetricError("degenerate metric at node")
    Gam = christoffel_from_jet(jet)[2][..., 0]
    names = ["t", "z"] + [f"y{k}" for k in range(1, n - 1)]
    out = {}
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                if abs(Gam[k, i, j]) > 0:
                    out[f"{names[k]}_{names[i]}{names[j]}"] = float(Gam[k, i, j])
    return out


def curvature(metric, grid, route="auto"):
    """``(Ricci, R)``: reduced Ricci tensor and scalar curvature at the nodes."""
    if min(grid.shape) < 5:
        raise GridError("grid too coarse for second differences")
    geo = Geometry.of(metric, grid, route)
    return ReducedSymTensor(sym_reduce(geo.ricci), metric.n), geo.scalar


def killing_form(Y, metric, grid, route="auto"):
    """``S(Y)_ij = (nabla_i Y_j + nabla_j Y_i) / 2`` as a reduced tensor."""
    geo = Geometry.of(metric, grid, route)
    return ReducedSymTensor(sym_reduce(killing_full(geo, Y)), metric.n)


def killing_full(geo, Y):
    """Killing form of a ReducedVector (or full covariant array) on a Geometry."""
    if isinstance(Y, ReducedVector) and not Y.covariant:
        # differentiate the contravariant components, then lower:
        # nabla_i Y_j = g_jk (d_i Y^k + Gamma^k_il Y^l)
        Yu = Y.full()
        nab_up = geo.d(Yu) + np.einsum("kilZ,lZ->ikZ", geo.gamma, Yu)
        for a in range(2, geo.n):
            nab_up[a, a] += Y.transverse_rate
        nab = np.einsum("jkZ,ikZ->ijZ", geo.g, nab_up)
    else:
        Yf = Y.full() if isinstance(Y, ReducedVector) else Y
        nab = geo.nabla(Yf)
        if isinstance(Y, ReducedVector):
            for a in range(2, geo.n):
                nab[a, a] += Y.transverse_rate * geo.g[a, a]
    return 0.5 * (nab + np.einsum("ijZ->jiZ", nab))


def killing_fields(grid, n):
    """Contravariant reduced Killing fields of the model: translation and dilation.

    The dilation needs its transverse part ``y d_y`` (see ``ReducedVector``).
    """
    one, zero = np.ones_like(grid.t), np.zeros_like(grid.t)
    return {
        "translation": ReducedVector(np.stack([one, zero]), n),
        "dilation": ReducedVector(np.stack([grid.t, grid.z]), n, transverse_rate=1.0),
    }


def inversion_field(grid, n):
    """The planar-reduced inversion generator ``(t^2 - z^2) d_t + 2 t z d_z``.

    Killing for the two-dimensional half-plane; in dimension ``n >= 3`` it
    fails only through the transverse block, where ``S_yy = -2 t / z^2``.
    """
    return ReducedVector(np.stack([grid.t**2 - grid.z**2, 2 * grid.t * grid.z]), n)


def scaling_pullback(metric, lam):
    """Pullback by ``(t, z) -> (lam t, lam z)``, realized on the fixed chart."""
    if lam <= 0:
        raise ConfigError("scaling factor must be positive")
    if lam == 1:
        return metric
    p = metric.params
    if metric.catalog_id == "hyperbolic":
        return metric
    if metric.catalog_id == "conformal_bump":
        width = p["width"] / lam if p["profile"] == "gaussian" else p["width"]
        return MetricSpec("conformal_bump", metric.n,
                          dict(p, eps=p["eps"] * lam ** p["sigma"], width=width), sigma=metric.sigma)
    if metric.catalog_id == "transverse_bump":
        return MetricSpec("transverse_bump", metric.n, dict(p, m=p["m"] * lam ** p["p"]), sigma=metric.sigma)
    if metric.sampler is None:
        raise ConfigError("grid-sampled metrics cannot be pulled back; supply a sampler")
    base = metric.sampler
    return MetricSpec("pulled_back", metric.n, dict(scale=lam), sigma=metric.sigma,
                      sampler=lambda t, z: base(lam * np.asarray(t), lam * np.asarray(z)),
                      slice_only=metric.slice_only)


def inversion_map(t, z, center=0.0):
    """Involutive hyperbolic inversion about the boundary point ``(center, 0)``."""
    u = np.asarray(t, dtype=float) - center
    z = np.asarray(z, dtype=float)
    r2 = u * u + z * z
    return center + u / r2, z / r2


def hyperbolic_inversion(metric, center=0.0, scale=1.0, check_radius=0.5, tol=1e-12):
    """Pullback of ``metric`` by the inversion about ``(center, 0)`` followed by ``scale``.

    In the ``(t, z)`` plane the inversion differential is ``r^{-2}`` times a
    reflection, so ``g_tilde`` transforms by the reflection while the
    transverse component is simply transported.  In ``n >= 3`` the inversion
    does not commute with transverse translations: the result is exact on the
    plane ``y = 0`` and is flagged ``slice_only`` unless the input is the
    hyperbolic metric (which is mapped to itself exactly).
    """
    if metric.catalog_id == "hyperbolic" and scale > 0:
        return metric
    # the image of a neighbourhood of infinity is a neighbourhood of the centre;
    # the centre itself must have a hyperbolic neighbourhood in the source
    rr, aa = np.meshgrid(np.linspace(0.05, 1.0, 12) * check_radius, np.linspace(0.05, np.pi - 0.05, 13))
    src = metric.tilde(center + rr.ravel() * np.cos(aa.ravel()), rr.ravel() * np.sin(aa.ravel()))
    if np.max(np.abs(src - np.array([1.0, 0.0, 1.0, 1.0])[:, None])) > tol:
        raise OverlapError("metric is not hyperbolic near the inversion centre")

    def sampler(t, z):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        tq, zq = inversion_map(t, z, center)
        c = metric.tilde(scale * tq, scale * zq)
        u = t - center
        r2 = u * u + z * z
        # reflection R = I - 2 v v^T / r^2 with v = (u, z)
        r00, r01, r11 = 1 - 2 * u * u / r2, -2 * u * z / r2, 1 - 2 * z * z / r2
        tt, tz, zz, pp = c
        ntt = r00 * (r00 * tt + r01 * tz) + r01 * (r00 * tz + r01 * zz)
        ntz = r00 * (r01 * tt + r11 * tz) + r01 * (r01 * tz + r11 * zz)
        nzz = r01 * (r01 * tt + r11 * tz) + r11 * (r01 * tz + r11 * zz)
        return np.stack([ntt, ntz, nzz, pp])

    return MetricSpec("pulled_back", metric.n, dict(center=center, scale=scale),
                      sigma=metric.sigma, sampler=sampler, slice_only=True)


def mass_aspect(metric, t_window=(-4.0, 4.0), z_band=(0.02, 0.2), n_t=81, n_z=24, resid_tol=1e-3):
    """Mass proxy: ``t``-averaged coefficient of ``z^n`` in ``tr(g_tilde - I)``.

    The trace is the coordinate trace ``tt + zz + (n-2) perp - n``.  At each
    ``t`` the trace is fitted on a geometric ``z`` band by
    ``c_n z^n + c_{n+1} z^{n+1} + c_{n+2} z^{n+2}``; a poor fit (relative
    residual above ``resid_tol``) means there is no resolvable ``z^n``
    coefficient.
    """
    n = metric.n
    tt = np.linspace(*t_window, n_t)
    zz = np.geomspace(*z_band, n_z)
    T, Z = np.meshgrid(tt, zz, indexing="ij")
    c = metric.tilde(T.ravel(), Z.ravel())
    tr = (c[0] + c[2] + (n - 2) * c[3] - n).reshape(T.shape)
    scale = np.max(np.abs(tr))
    if scale == 0:
        return 0.0
    basis = np.stack([zz**n, zz ** (n + 1), zz ** (n + 2)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, tr.T, rcond=None)
    resid = tr.T - basis @ coef
    if np.max(np.abs(resid)) > resid_tol * scale:
        raise NoMassError("trace of g_tilde - I has no resolvable z^n leading term")
    return float(np.trapezoid(coef[0], tt) / (tt[-1] - tt[0]))
