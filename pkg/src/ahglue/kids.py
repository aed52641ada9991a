"""Killing initial data: residuals, the static KIDs of hyperbolic space and
spectral no-kernel tests in weighted spaces.

A KID is a pair ``(N, Y)`` annihilated by the adjoint of the linearized
constraint map.  All fields are planar symmetric (independent of the
transverse coordinates ``y``) except for an optional transverse quadratic
term of the lapse: catalog entries such as ``(1 + t^2 + |y|^2 + z^2) / (2z)``
restrict to the slice ``y = 0`` with a nonzero ``d^2 N / dy^2``, which is
carried by ``KidCandidate.transverse_quadratic`` (``N = N_0(t, z) + q(t, z)
|y|^2`` near the slice).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NonConvergenceError
from .fields import ReducedVector
from .geometry import Geometry, build_metric, nabla
from .grid import build_grid
from .inequalities import QuadraticFormPair, rayleigh_min
from .operators import (RC, adjoint_constraints_matrix, adjoint_scalar_matrix, covector_scalar_mass,
                        scalar_mass, tensor_mass)
from .weights import WeightConfig, defining_x, phi_psi


@dataclass(frozen=True, eq=False)
class KidCandidate:
    """Candidate pair: lapse ``N`` (node values), covariant ``Y`` and decay class ``lam``.

    ``transverse_quadratic`` is ``q`` in ``N = N_0 + q |y|^2``; ``Y`` must not
    carry a transverse rate.
    """

    N: np.ndarray
    Y: Optional[ReducedVector] = None
    lam: float = 1.0
    transverse_quadratic: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("decay class exponent must be positive")
        if self.Y is not None and self.Y.transverse_rate != 0:
            raise ConfigError("KID candidates with a transverse rate are not supported")

    def covector(self, geo):
        """Full covariant ``Y`` array (zeros if absent)."""
        n, N = geo.n, geo.grid.size
        out = np.zeros((n, N))
        if self.Y is not None:
            out[:2] = self.Y.comps if self.Y.covariant else geo.lower1(self.Y.full())[:2]
        return out


@dataclass
class KidResidual:
    """Pointwise residuals (full covariant arrays / scalars)."""

    killing: np.ndarray       # nabla_(i Y_j) - K_ij N
    hessian: np.ndarray       # nabla nabla N - right-hand side with the trace eliminated
    trace: np.ndarray         # Delta N - its traced right-hand side
    second_derivative: np.ndarray  # nabla_i nabla_j Y_k - curvature/K terms

    def norms(self, geo, width=2):
        """``L^2`` norms of the four residuals over nodes at least ``width`` from the edges.

        One-sided closures make second derivatives least accurate on the
        outer layers of nodes, so these are excluded by default.
        """
        mu = geo.measure * (~geo.grid.boundary_mask(width=width) if width else 1.0)
        A = geo.ginv

        def n2(T):
            if T.ndim == 1:
                return T * T
            if T.ndim == 3:
                return np.einsum("acZ,bdZ,abZ,cdZ->Z", A, A, T, T)
            return np.einsum("adZ,beZ,cfZ,abcZ,defZ->Z", A, A, A, T, T)

        return {k: float(np.sqrt(mu @ n2(getattr(self, k))))
                for k in ("killing", "hessian", "trace", "second_derivative")}


def _hessian_with_transverse(geo, N, q):
    H = geo.hessian(N)
    if q is not None:
        for a in range(2, geo.n):
            H[a, a] = H[a, a] + 2 * q
    return H


def kid_residual(data, cand, grid):
    """Residuals of the KID equations for ``cand`` on ``grid``.

    Evaluates, with ``S = nabla_(i Y_j)``:

    * ``S - K N``;
    * ``nabla nabla N - [Ric - 2 K.K + tr K K + (R + (tr K)^2 - |K|^2) g / (1-n)] N
      - (nabla_l K + (div K_l - d_l tr K) g / (n-1)) Y^l - 2 K^l_(i nabla_j) Y_l``;
    * ``Delta N + [(R + (tr K)^2 - n |K|^2) N - (n div K - d tr K)(Y)] / (n-1)``;
    * ``nabla_i nabla_j Y_k - R_{l i j k} Y^l + nabla_k (N K_ij) - nabla_i (N K_kj)
      - nabla_j (N K_ik)``, with ``R_{l i j k} = R_{jk i}{}^m g_{ml}``-type
      index placement as fixed by ``_riemann_lijk`` (vanishes on Killing fields).
    """
    geo, Kj = data.jets(grid)
    n = geo.n
    A, g = geo.ginv, geo.g
    K = Kj.g
    N = np.asarray(cand.N, dtype=float)
    q = cand.transverse_quadratic
    Y = cand.covector(geo)
    Yup = geo.raise1(Y)
    DY = geo.nabla(Y)
    S = 0.5 * (DY + np.einsum("ijZ->jiZ", DY))
    killing = S - K * N
    H = _hessian_with_transverse(geo, N, q)
    lapN = np.einsum("ijZ,ijZ->Z", A, H)
    DK = nabla(K, Kj.dg, geo.gamma)  # DK[l, i, j] = nabla_l K_ij
    trK = np.einsum("ijZ,ijZ->Z", A, K)
    KK = np.einsum("liZ,lmZ,mjZ->ijZ", K, A, K)  # K_i^l K_lj
    K2 = np.einsum("ijZ,ijZ->Z", A, KK)
    divK = np.einsum("pqZ,qlpZ->lZ", A, DK)  # nabla^p K_lp
    dtrK = np.einsum("ijZ,lijZ->lZ", A, DK)
    R, Ric = geo.scalar, geo.ricci
    Kmix = np.einsum("lmZ,miZ->liZ", A, K)  # K^l_i
    KDY = np.einsum("liZ,jlZ->ijZ", Kmix, DY)  # K^l_i nabla_j Y_l
    coef = Ric - 2 * KK + trK * K + g * ((R + trK**2 - K2) / (1 - n))
    vecK = DK + g[None] * ((divK - dtrK) / (n - 1))[:, None, None]
    hess = H - coef * N - np.einsum("lijZ,lZ->ijZ", vecK, Yup) - (KDY + np.einsum("ijZ->jiZ", KDY))
    trace = lapN + ((R + trK**2 - n * K2) * N - np.einsum("lZ,lZ->Z", n * divK - dtrK, Yup)) / (n - 1)
    DNK = np.einsum("kZ,ijZ->kijZ", geo.d(N), K) + N * DK  # nabla_k (N K_ij)
    second = (geo.nabla2(Y) - np.einsum("lijkZ,lZ->ijkZ", _riemann_lijk(geo), Yup)
              + np.einsum("kijZ->ijkZ", DNK) - np.einsum("ikjZ->ijkZ", DNK) - np.einsum("jikZ->ijkZ", DNK))
    return KidResidual(killing, hess, trace, second)


def _riemann_lijk(geo):
    """Fully covariant curvature arranged so that ``nabla_i nabla_j Y_k = R_{l i j k} Y^l``
    for Killing fields.

    With ``R_abcd = R_abc^e g_ed`` (``Geometry.riemann_down``) this is the
    array itself: ``nabla_i nabla_j Y_k = R_{lijk} Y^l``.
    """
    return geo.riemann_down


def _diag(c):
    return sp.diags(np.asarray(c, dtype=float))


def second_derivative_matrix(geo, Kj):
    """Sparse second-derivative KID residual (``n^3 N x 3N``) on ``(Y_t, Y_z, N)``.

    Row block ``(i, j, k)`` is ``nabla_i nabla_j Y_k - R_{lijk} Y^l + nabla_k (N K_ij)
    - nabla_i (N K_kj) - nabla_j (N K_ik)``.  Pure second partials use the
    compact ``Dtt, Dtz, Dzz`` stencils, so a grid sawtooth (annihilated by the
    central first-derivative stencils entering ``S(Y)``) is not in its kernel.
    """
    grid, n = geo.grid, geo.n
    Nn = grid.size
    Gam, dGam, A = geo.gamma, geo.dgamma, geo.ginv
    K = Kj.g
    DK = nabla(K, Kj.dg, Gam)
    Rup = np.einsum("lijkZ,lmZ->mijkZ", geo.riemann_down, A)  # R_{lijk} g^{lm}
    I, ZN = sp.identity(Nn, format="csr"), sp.csr_matrix((Nn, Nn))
    S = [sp.hstack([I, ZN, ZN]).tocsr(), sp.hstack([ZN, I, ZN]).tocsr()]
    Nsel = sp.hstack([ZN, ZN, I]).tocsr()
    D = [grid.Dt, grid.Dz]
    DD = [[grid.Dtt, grid.Dtz], [grid.Dtz, grid.Dzz]]

    def part(i, op):
        return op if i < 2 else None

    def d1(i, M):
        return D[i] @ M if i < 2 else None

    def acc(a, b):
        if b is None:
            return a
        return b if a is None else a + b

    O = [[None] * n for _ in range(n)]  # nabla_j Y_k
    for j in range(n):
        for k in range(n):
            op = d1(j, S[k]) if k < 2 else None
            for m in range(2):
                op = acc(op, -_diag(Gam[m, j, k]) @ S[m])
            O[j][k] = op
    rows = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                op = (DD[i][j] @ S[k]) if (i < 2 and j < 2 and k < 2) else None
                for m in range(2):
                    # d_i (Gamma^m_jk Y_m)
                    op = acc(op, -_diag(dGam[i, m, j, k]) @ S[m])
                    op = acc(op, -_diag(Gam[m, j, k]) @ d1(i, S[m]) if i < 2 else None)
                for l in range(n):
                    op = acc(op, -_diag(Gam[l, i, j]) @ O[l][k])
                    op = acc(op, -_diag(Gam[l, i, k]) @ O[j][l])
                for m in range(2):
                    op = acc(op, -_diag(Rup[m, i, j, k]) @ S[m])
                nk = _diag(DK[k, i, j] - DK[i, k, j] - DK[j, i, k]) @ Nsel
                for (c, dd) in ((K[i, j], k), (-K[k, j], i), (-K[i, k], j)):
                    if dd < 2:
                        nk = nk + _diag(c) @ D[dd] @ Nsel
                op = acc(op, nk)
                rows.append(op.tocsr())
    return sp.vstack(rows).tocsr()


def third_order_mass(geo, weight=1.0):
    """Mass matrix of ``sum mu w <T, T'>_g`` for stacked full covariant 3-tensors."""
    n = geo.n
    A = geo.ginv
    w = geo.measure * weight
    idx = [(i, j, k) for i in range(n) for j in range(n) for k in range(n)]
    return sp.bmat([[_diag(w * A[i, a] * A[j, b] * A[k, c]) for (a, b, c) in idx] for (i, j, k) in idx],
                   format="csr")


# ----------------------------------------------------------------------------
# the static KIDs of hyperbolic space
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class StaticKid:
    """Closed form ``N(t, z)`` with transverse quadratic coefficient ``q(t, z)``."""

    name: str
    N: Callable
    q: Callable

    def candidate(self, grid, n):
        return KidCandidate(self.N(grid.t, grid.z), None, 1.0, self.q(grid.t, grid.z))


def exact_static_kids(n=3):
    """The four static KIDs of the hyperbolic half-space in reduced form.

    ``1/z``, ``t/z``, ``(1 + t^2 + |y|^2 + z^2) / (2z)`` and
    ``(1 - t^2 - |y|^2 - z^2) / (2z)``; each satisfies ``Hess N = N g``.
    """
    if n < 3:
        raise ConfigError("n must be at least 3")
    zero = lambda t, z: np.zeros_like(z)
    return {
        "1/z": StaticKid("1/z", lambda t, z: 1.0 / z, zero),
        "t/z": StaticKid("t/z", lambda t, z: t / z, zero),
        "(1+t^2+z^2)/(2z)": StaticKid("(1+t^2+z^2)/(2z)", lambda t, z: (1 + t * t + z * z) / (2 * z),
                                      lambda t, z: 1.0 / (2 * z)),
        "(1-t^2-z^2)/(2z)": StaticKid("(1-t^2-z^2)/(2z)", lambda t, z: (1 - t * t - z * z) / (2 * z),
                                      lambda t, z: -1.0 / (2 * z)),
    }


def static_residual(geo, N, q=None):
    """Reduced ``P*_g N = -(Delta N) g + Hess N - N Ric`` including the transverse quadratic term."""
    out = (adjoint_scalar_matrix(geo) @ np.asarray(N, dtype=float)).reshape(4, -1)
    if q is not None:
        q = np.asarray(q, dtype=float)
        extra_lap = (geo.n - 2) * 2 * q * geo.ginv[2, 2]
        for r, (i, j) in enumerate(RC):
            out[r] -= extra_lap * geo.g[i, j]
        out[3] += 2 * q
    return out


def static_kid_convergence(n=3, resolutions=(17, 33, 65), t_range=(-1.0, 1.0), z_range=(0.25, 1.25),
                           combination=None):
    """``||P* N|| / ||N||`` for each catalog KID across a grid ladder, with orders.

    ``combination`` is an optional dict of coefficients adding a linear
    combination of the catalog entries as an extra row.
    """
    metric = build_metric("hyperbolic", n=n)
    kids = exact_static_kids(n)
    names = list(kids)
    if combination:
        names.append("combination")
    table = {k: [] for k in names}
    for m in resolutions:
        grid = build_grid("rect", (m, m), grading="none", t_range=t_range, z_range=z_range)
        geo = Geometry.of(metric, grid)
        M = tensor_mass(geo)
        mu = geo.measure
        fields = {k: (kid.N(grid.t, grid.z), kid.q(grid.t, grid.z)) for k, kid in kids.items()}
        if combination:
            N = sum(c * fields[k][0] for k, c in combination.items())
            q = sum(c * fields[k][1] for k, c in combination.items())
            fields["combination"] = (N, q)
        for k in names:
            N, q = fields[k]
            r = static_residual(geo, N, q).ravel()
            table[k].append(float(np.sqrt(r @ (M @ r)) / np.sqrt(mu @ (N * N))))
    out = {}
    for k, vals in table.items():
        orders = [float(np.log(vals[i] / vals[i + 1]) / np.log((resolutions[i + 1] - 1) / (resolutions[i] - 1)))
                  for i in range(len(vals) - 1)]
        out[k] = dict(ratios=vals, orders=orders, min_order=min(orders))
    return out


def z_growth_exponent(N, grid, z_max=None):
    """Exponent ``p`` of ``|N| ~ z^p`` from ``log|N| = p log z + c(t)`` (per-column intercepts)."""
    f = np.abs(np.asarray(N, dtype=float))
    ok = f > 0
    if z_max is not None:
        ok &= grid.z <= z_max
    n1, n2 = grid.shape
    col = np.repeat(np.arange(n1), n2)
    cols = np.unique(col[ok])
    X = np.zeros((ok.sum(), 1 + cols.size))
    X[:, 0] = np.log(grid.z[ok])
    X[np.arange(ok.sum()), 1 + np.searchsorted(cols, col[ok])] = 1.0
    coef, *_ = np.linalg.lstsq(X, np.log(f[ok]), rcond=None)
    return float(coef[0])


# ----------------------------------------------------------------------------
# spectral no-kernel test
# ----------------------------------------------------------------------------

DEFAULT_LADDER = (((24, 24), 0.04), ((32, 32), 0.02), ((48, 48), 0.01))


@dataclass
class KernelTrend:
    values: list
    ladder: list
    bounded_below: bool
    variation: float
    cfg: Optional[WeightConfig] = None
    system: str = "static"
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(values=self.values, ladder=[list(r) + [z] for r, z in self.ladder],
                    bounded_below=self.bounded_below, variation=self.variation, system=self.system,
                    cfg=None if self.cfg is None else dict(a=self.cfg.a, b=self.cfg.b, c=self.cfg.c, n=self.cfg.n))


def kernel_pair(data, geo, cfg, weighted=True, dirichlet_width=2, system="static"):
    """Normal-form pair ``(P*^T W P*, M_psi)`` on the constrained space.

    ``system="static"``: ``||psi phi^2 P*_g N||^2`` against ``||psi N||^2``.
    ``system="full"``: ``||Phi P*_{(K,g)}(Y, N)||_psi^2`` (weights ``phi^2``
    and ``phi^4`` on the two output tensors) plus the ``phi^6``-weighted
    second-derivative residual, against ``||psi (Y, N)||^2``.  The extra term
    vanishes on KIDs; it removes the grid sawtooth that central differences
    leave in the kernel of ``S(Y)``.
    ``weighted=False`` drops all weights and boundary conditions.
    """
    grid = geo.grid
    if weighted:
        phi, psi = phi_psi(defining_x(grid), cfg)
        psi2 = psi**2
        free = ~grid.boundary_mask(width=dirichlet_width)
    else:
        phi = np.ones(grid.size)
        psi2 = np.ones(grid.size)
        free = np.ones(grid.size, dtype=bool)
    if system == "static":
        P = adjoint_scalar_matrix(geo)
        A = P.T @ tensor_mass(geo, psi2 * phi**4) @ P
        B = scalar_mass(geo, psi2)
        return QuadraticFormPair(sp.csr_matrix(A), sp.csr_matrix(B), free, cfg, "static")
    if system == "full":
        Kj = data.K_jet(geo)
        P = adjoint_constraints_matrix(geo, Kj)
        W = sp.block_diag([tensor_mass(geo, psi2 * phi**2), tensor_mass(geo, psi2 * phi**4)])
        E = second_derivative_matrix(geo, Kj)
        A = P.T @ W @ P + E.T @ third_order_mass(geo, psi2 * phi**6) @ E
        B = covector_scalar_mass(geo, psi2)
        return QuadraticFormPair(sp.csr_matrix(A), sp.csr_matrix(B), np.tile(free, 3), cfg, "full")
    raise ConfigError(f"unknown KID system {system!r}")


def kernel_test(data, cfg, ladder=DEFAULT_LADDER, system="static", weighted=True, tol=0.2):
    """Smallest normal-form eigenvalue across a ladder of annulus grids.

    Each rung refines the grid and halves the truncation height.  The trend
    is ``bounded_below`` when the relative change between the last two rungs
    is below ``tol``; a KID entering the weighted space shows up as values
    decreasing toward zero instead.  This is numerical evidence for a trivial
    kernel, not a proof.
    """
    if not ladder:
        raise ConfigError("kernel_test needs at least one rung")
    vals = []
    for res, zmin in ladder:
        if min(res) < 5 or not zmin > 0:
            raise ConfigError("invalid grid rung")
        grid = build_grid("annulus", res, grading="log", z_min=zmin)
        geo = Geometry.of(data.g, grid)
        pair = kernel_pair(data, geo, cfg, weighted, system=system)
        try:
            vals.append(rayleigh_min(pair).value)
        except NonConvergenceError as e:
            vals.append(float(e.report.get("last", np.nan)))
    var = abs(vals[-1] - vals[-2]) / abs(vals[-2]) if len(vals) > 1 else float("nan")
    bounded = bool(len(vals) > 1 and var < tol and vals[-1] > 0)
    return KernelTrend(vals, list(ladder), bounded, float(var), cfg, system)
