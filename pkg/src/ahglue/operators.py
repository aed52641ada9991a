"""Constraint map, linearizations and their adjoints under planar symmetry.

Adjoint operators are assembled as sparse matrices acting on node values.
The corresponding "forward" operators are their exact transposes with
respect to the discrete ``L^2`` inner products

    <h, k>_out = sum_nodes mu  g^{ac} g^{bd} h_ab k_cd,      <f, f'>_in = sum_nodes mu f f',

so discrete adjointness holds to round-off by construction.  Independent
analytic evaluations of the linearized operators (from jets and covariant
derivatives) are provided to check that the transposes are consistent
discretizations.

Unknown layouts: scalars are ``(N,)``; the constraint adjoint acts on
``(Y_t, Y_z, N)`` stacked into ``3N`` (covariant ``Y``); symmetric tensors are
stacked ``(tt, tz, zz, perp)`` into ``4N``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .fields import ReducedSymTensor, ReducedVector, sym_full, sym_reduce
from .geometry import Geometry, Jet, connection_difference, metric_jet, nabla, nabla2, reduced_jet, scalar_difference

RC = ((0, 0), (0, 1), (1, 1), (2, 2))  # reduced component index pairs


# ----------------------------------------------------------------------------
# initial data
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InitialData:
    """A pair ``(K, g)`` with asymptotic parameter ``tau`` and constant ``Lambda``.

    ``K`` is either given by node samples (``K``, a ReducedSymTensor on the
    grid it is used with) or as ``K = K_scale * g`` (``K_scale`` defaults to ``tau``).
    """

    g: object
    tau: float = 0.0
    Lambda: Optional[float] = None
    K: Optional[ReducedSymTensor] = None
    K_scale: Optional[float] = None

    def __post_init__(self):
        if self.Lambda is None:
            n = self.g.n
            object.__setattr__(self, "Lambda", n * (n - 1) * (self.tau**2 - 1) / 2)

    @property
    def n(self):
        return self.g.n

    @property
    def kappa(self):
        return self.tau if self.K_scale is None else self.K_scale

    def jets(self, grid, route="auto"):
        """``(Geometry, K jet)`` at the nodes of ``grid``."""
        geo = Geometry(metric_jet(self.g, grid, route), grid)
        return geo, self.K_jet(geo)

    def K_jet(self, geo):
        if self.K is None:
            return geo.jet.scale(self.kappa)
        return reduced_jet(self.K.comps, geo.grid, self.n)


def hyperboloidal(n=3):
    from .geometry import build_metric
    return InitialData(build_metric("hyperbolic", n=n), tau=1.0, Lambda=0.0)


def static_ads(n=3):
    from .geometry import build_metric
    return InitialData(build_metric("hyperbolic", n=n), tau=0.0, Lambda=-n * (n - 1) / 2, K_scale=0.0)


def tau_data(metric, tau):
    return InitialData(metric, tau=tau)


@dataclass(frozen=True, eq=False)
class ConstraintValue:
    """Matter momentum ``J`` (covariant) and matter density."""

    J: ReducedVector
    matter_density: np.ndarray


# ----------------------------------------------------------------------------
# pointwise helpers
# ----------------------------------------------------------------------------

def _T(X, Y, P, R):
    return np.einsum("acZ,bdZ,abZ,cdZ->Z", X, Y, P, R)


def trace(A, h):
    return np.einsum("ijZ,ijZ->Z", A, h)


# ----------------------------------------------------------------------------
# nonlinear constraint map and its cancellation-free differences
# ----------------------------------------------------------------------------

def constraint_fields(geo, Kj, Lambda):
    """``(J, matter density)`` as full arrays from a Geometry and a K jet."""
    A = geo.ginv
    K = Kj.g
    B = nabla(K, Kj.dg, geo.gamma)
    J = 2 * (-np.einsum("jkZ,kijZ->iZ", A, B) + np.einsum("pqZ,ipqZ->iZ", A, B))
    trK = trace(A, K)
    rho = geo.scalar - _T(A, A, K, K) + trK**2 - 2 * Lambda
    return J, rho


def constraint_map(data, grid, route="auto"):
    """Evaluate the constraint operator at the nodes of ``grid``."""
    geo, Kj = data.jets(grid, route)
    J, rho = constraint_fields(geo, Kj, data.Lambda)
    return ConstraintValue(ReducedVector(J[:2], data.n, covariant=True), rho)


def constraint_difference(geo, Kj, Qj, hj):
    """``S(K+Q, g+h) - S(K, g)`` without subtracting large quantities."""
    A, A0d = geo.ginv, geo.dginv
    K, dK = Kj.g, Kj.dg
    Q, dQ = Qj.g, Qj.dg
    h, dh = hj.g, hj.dg
    Kp = K + Q
    Ap, dAp, C, _ = connection_difference(geo, hj)
    dR = scalar_difference(geo, hj)
    B = nabla(K, dK, geo.gamma)
    dB = (nabla(Q, dQ, geo.gamma) - np.einsum("lkiZ,ljZ->kijZ", C, Kp)
          - np.einsum("lkjZ,ilZ->kijZ", C, Kp))
    dA = -np.einsum("iaZ,abZ,bjZ->ijZ", Ap, h, A)
    ddA = -(np.einsum("miaZ,abZ,bjZ->mijZ", dAp, h, A) + np.einsum("iaZ,mabZ,bjZ->mijZ", Ap, dh, A)
            + np.einsum("iaZ,abZ,mbjZ->mijZ", Ap, h, A0d))
    dtr = trace(Ap, Q) + trace(dA, K)
    d_dtr = (np.einsum("mpqZ,pqZ->mZ", dAp, Q) + np.einsum("pqZ,mpqZ->mZ", Ap, dQ)
             + np.einsum("mpqZ,pqZ->mZ", ddA, K) + np.einsum("pqZ,mpqZ->mZ", dA, dK))
    J = 2 * (-np.einsum("jkZ,kijZ->iZ", Ap, dB) - np.einsum("jkZ,kijZ->iZ", dA, B) + d_dtr)
    dK2 = _T(dA, Ap, Kp, Kp) + _T(A, dA, Kp, Kp) + _T(A, A, Q, Kp) + _T(A, A, K, Q)
    trK = trace(A, K)
    rho = dR - dK2 + dtr * (2 * trK + dtr)
    return J, rho


# ----------------------------------------------------------------------------
# analytic linearizations (independent of the assembled matrices)
# ----------------------------------------------------------------------------

def linearized_scalar(geo, hj):
    """``P_g h = -Delta tr h + div div h - <h, Ric>`` from second covariant derivatives."""
    A = geo.ginv
    H2 = nabla2(hj.g, hj.dg, hj.ddg, geo.gamma, geo.dgamma)  # [a, b, p, q]
    lap_tr = np.einsum("abZ,pqZ,abpqZ->Z", A, A, H2)
    divdiv = np.einsum("kaZ,lbZ,abklZ->Z", A, A, H2)
    return -lap_tr + divdiv - _T(A, A, hj.g, geo.ricci)


def linearized_constraints(geo, Kj, Qj, hj):
    """The two rows of the linearized constraint operator at ``(K, g)``."""
    A, Gam = geo.ginv, geo.gamma
    K, Q, h = Kj.g, Qj.g, hj.g
    Kup = np.einsum("paZ,qbZ,abZ->pqZ", A, A, K)
    Kmix = np.einsum("qaZ,aiZ->qiZ", A, K)  # K^q_i
    Dh = nabla(h, hj.dg, Gam)
    DQ = nabla(Q, Qj.dg, Gam)
    DK = nabla(K, Kj.dg, Gam)
    div_h = np.einsum("jkZ,kqjZ->qZ", A, Dh)  # nabla^j h_qj
    d_trh = np.einsum("pqZ,ipqZ->iZ", A, Dh)
    J = (-np.einsum("pqZ,ipqZ->iZ", Kup, Dh)
         + np.einsum("qiZ,qZ->iZ", Kmix, 2 * div_h - d_trh)
         - 2 * np.einsum("jkZ,kijZ->iZ", A, DQ) + 2 * np.einsum("pqZ,ipqZ->iZ", A, DQ))
    DKup = np.einsum("paZ,qbZ,iabZ->ipqZ", A, A, DK)  # nabla_i K^{pq}
    DKmix = np.einsum("qkZ,pmZ,kmiZ->qpiZ", A, A, DK)  # nabla^q K^p_i
    J = J - 2 * (np.einsum("ipqZ,pqZ->iZ", DKup, h) - np.einsum("qpiZ,pqZ->iZ", DKmix, h))
    trK = trace(A, K)
    KK = np.einsum("plZ,qlZ->pqZ", Kup, Kmix)  # K^{pl} K^q_l
    rho = (linearized_scalar(geo, hj) + 2 * trace(KK, h) - 2 * _T(A, A, K, Q)
           + 2 * trK * (-_T(A, A, h, K) + trace(A, Q)))
    return J, rho


# ----------------------------------------------------------------------------
# sparse building blocks
# ----------------------------------------------------------------------------

def _diag(c):
    return sp.diags(np.asarray(c, dtype=float))


def _first_ops(geo):
    grid = geo.grid
    return [grid.Dt, grid.Dz] + [None] * (geo.n - 2)


def hessian_ops(geo):
    """Sparse ``(nabla nabla f)_ij`` operators ``H[i][j]`` (N x N)."""
    g = geo.grid
    n = geo.n
    D = _first_ops(geo)
    DD = [[g.Dtt, g.Dtz], [g.Dtz, g.Dzz]]
    H = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            op = DD[i][j] if (i < 2 and j < 2) else sp.csr_matrix((g.size, g.size))
            for m in range(2):
                op = op - _diag(geo.gamma[m, i, j]) @ D[m]
            H[i][j] = op.tocsr()
    return H


def laplacian_op(geo, H=None):
    H = hessian_ops(geo) if H is None else H
    n = geo.n
    op = 0
    for k in range(n):
        for l in range(n):
            op = op + _diag(geo.ginv[k, l]) @ H[k][l]
    return op.tocsr()


def nabla_covector_ops(geo):
    """Sparse ``(nabla_i Y_j)`` operators ``O[i][j]`` acting on ``(Y_t, Y_z)`` (N x 2N)."""
    N = geo.grid.size
    n = geo.n
    I, Z = sp.identity(N, format="csr"), sp.csr_matrix((N, N))
    S = [sp.hstack([I, Z]).tocsr(), sp.hstack([Z, I]).tocsr()]
    D = _first_ops(geo)
    O = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            op = (D[i] @ S[j]) if (i < 2 and j < 2) else sp.csr_matrix((N, 2 * N))
            for k in range(2):
                op = op - _diag(geo.gamma[k, i, j]) @ S[k]
            O[i][j] = op.tocsr()
    return O, S


def tensor_gram(geo):
    """Per-node Gram matrix ``G[p, q] = <E_p, E_q>_g`` of the reduced component basis."""
    n = geo.n
    E = np.zeros((4, n, n))
    for p, (a, b) in enumerate(RC):
        if p == 3:
            for k in range(2, n):
                E[p, k, k] = 1.0
        else:
            E[p, a, b] = E[p, b, a] = 1.0
    A = geo.ginv
    return np.einsum("acZ,bdZ,pab,qcd->pqZ", A, A, E, E)


def tensor_mass(geo, weight=1.0):
    """Sparse ``4N x 4N`` matrix of ``sum mu w <h, k>_g``."""
    G = tensor_gram(geo)
    w = geo.measure * weight
    return sp.bmat([[_diag(G[p, q] * w) for q in range(4)] for p in range(4)], format="csr")


def scalar_mass(geo, weight=1.0):
    return _diag(geo.measure * weight).tocsr()


def covector_scalar_mass(geo, weight=1.0, inverse=False):
    """Mass matrix of ``(Y_t, Y_z, N)`` with ``<Y, Y'> = g^{ab} Y_a Y'_b`` (or its inverse)."""
    w = geo.measure * weight
    if inverse:
        blk = geo.g[:2, :2] / w
        return sp.bmat([[_diag(blk[0, 0]), _diag(blk[0, 1]), None],
                        [_diag(blk[1, 0]), _diag(blk[1, 1]), None],
                        [None, None, _diag(1.0 / w)]], format="csr")
    A = geo.ginv
    return sp.bmat([[_diag(A[0, 0] * w), _diag(A[0, 1] * w), None],
                    [_diag(A[1, 0] * w), _diag(A[1, 1] * w), None],
                    [None, None, _diag(w)]], format="csr")


# ----------------------------------------------------------------------------
# adjoint operators
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdjointOperator:
    """An assembled adjoint ``P*`` with the inner products defining ``P``.

    ``P = Min^{-1} P*^T Mout``, so that ``<P v, u>_in = <v, P* u>_out``.
    """

    Pstar: sp.csr_matrix
    Mout: sp.csr_matrix
    Min_inv: sp.csr_matrix

    def adjoint(self, u):
        return self.Pstar @ u

    def forward(self, v):
        return self.Min_inv @ (self.Pstar.T @ (self.Mout @ v))

    def forward_matrix(self):
        return (self.Min_inv @ self.Pstar.T @ self.Mout).tocsr()


def adjoint_scalar_matrix(geo):
    """Sparse ``P*_g f = -(Delta f) g + nabla nabla f - f Ric`` (4N x N)."""
    H = hessian_ops(geo)
    lap = laplacian_op(geo, H)
    rows = []
    for (i, j) in RC:
        rows.append((-_diag(geo.g[i, j]) @ lap + H[i][j] - _diag(geo.ricci[i, j])).tocsr())
    return sp.vstack(rows).tocsr()


def scalar_adjoint_operator(geo):
    return AdjointOperator(adjoint_scalar_matrix(geo), tensor_mass(geo), _diag(1.0 / geo.measure).tocsr())


def adjoint_scalar(geo, f):
    """``P*_g f`` as a ReducedSymTensor."""
    out = adjoint_scalar_matrix(geo) @ np.asarray(f, dtype=float)
    return ReducedSymTensor(out.reshape(4, -1), geo.n)


def static_operator(geo, N):
    """``nabla nabla N - (Delta N) g - N Ric`` (identical to ``P*_g N``)."""
    return adjoint_scalar(geo, N)


def adjoint_constraints_matrix(geo, Kj):
    """Sparse ``P*_{(K,g)}(Y, N)`` (8N x 3N): two symmetric tensors from ``(Y_t, Y_z, N)``.

    The first tensor is dual to the ``K`` variation ``Q`` and the second to the
    metric variation ``h``; the transpose therefore acts on stacked ``(Q, h)``.
    """
    n = geo.n
    Nn = geo.grid.size
    A, g = geo.ginv, geo.g
    K = Kj.g
    O, S = nabla_covector_ops(geo)
    H = hessian_ops(geo)
    lap = laplacian_op(geo, H)
    ZN = sp.csr_matrix((Nn, Nn))
    Z2 = sp.csr_matrix((Nn, 2 * Nn))
    I = sp.identity(Nn, format="csr")

    def onY(op):
        return sp.hstack([op, ZN]).tocsr()

    def onN(op):
        return sp.hstack([Z2, op]).tocsr()

    trK = trace(A, K)
    Kmix = np.einsum("lmZ,miZ->liZ", A, K)  # K^l_i
    Kup = np.einsum("paZ,qbZ,abZ->pqZ", A, A, K)
    DK = nabla(K, Kj.dg, geo.gamma)
    divK = np.einsum("pqZ,qlpZ->lZ", A, DK)  # nabla^p K_lp
    divY = 0
    KDY = 0
    for k in range(n):
        for l in range(n):
            divY = divY + _diag(A[k, l]) @ O[k][l]
            KDY = KDY + _diag(Kup[k, l]) @ O[k][l]
    row1, row2 = [], []
    for (i, j) in RC:
        sym = 0.5 * (O[i][j] + O[j][i])
        r1 = onY(2 * (sym - _diag(g[i, j]) @ divY)) + onN(_diag(2 * (-K[i, j] + trK * g[i, j])) @ I)
        y2 = _diag(K[i, j]) @ divY + _diag(g[i, j]) @ KDY
        for l in range(n):
            y2 = y2 - _diag(Kmix[l, i]) @ O[j][l] - _diag(Kmix[l, j]) @ O[i][l]
            c = divK[l] * g[i, j] - DK[l, i, j]
            for m in range(2):
                y2 = y2 + _diag(c * A[l, m]) @ S[m]
        KK = np.einsum("lZ,lZ->Z", Kmix[:, i], K[j, :])
        n2 = (-_diag(g[i, j]) @ lap + H[i][j]
              + _diag(-geo.ricci[i, j] + 2 * KK - 2 * trK * K[i, j]))
        row1.append(r1)
        row2.append(onY(y2) + onN(n2))
    return sp.vstack(row1 + row2).tocsr()


def constraint_adjoint_operator(geo, Kj):
    M = tensor_mass(geo)
    return AdjointOperator(adjoint_constraints_matrix(geo, Kj), sp.block_diag([M, M], format="csr"),
                           covector_scalar_mass(geo, inverse=True))


def adjoint_constraints(geo, Kj, Y, N):
    """Apply ``P*_{(K,g)}`` to a covariant ReducedVector ``Y`` and scalar ``N``."""
    comps = Y.comps if Y.covariant else geo.lower1(Y.full())[:2]
    v = np.concatenate([comps[0], comps[1], np.asarray(N, dtype=float)])
    out = (adjoint_constraints_matrix(geo, Kj) @ v).reshape(8, -1)
    return ReducedSymTensor(out[:4], geo.n), ReducedSymTensor(out[4:], geo.n)


# ----------------------------------------------------------------------------
# composite glue operator and the Phi map
# ----------------------------------------------------------------------------

def phi_map(phi, pair):
    """``Phi(x, y) = (phi x, phi^2 y)`` on arrays whose last axis is the node axis."""
    x, y = pair
    return phi * np.asarray(x), phi**2 * np.asarray(y)


def composite_glue_matrix(geo, phi, psi):
    """SPD matrix ``A = P*^T M diag(phi^4 psi^2) P*`` and the adjoint operator.

    With the ``psi^2``-weighted inner product ``(u, v) -> sum mu psi^2 u v`` the
    operator ``L = psi^{-2} P (phi^4 psi^2 P* .)`` satisfies ``<u, L u> = u^T A u``.
    """
    op = scalar_adjoint_operator(geo)
    w = phi**4 * psi**2
    Aw = (op.Pstar.T @ tensor_mass(geo, w) @ op.Pstar).tocsr()
    return Aw, op


def apply_composite(geo, phi, psi, u):
    """``L u = psi^{-2} P_g(phi^4 psi^2 P*_g u)`` by the weighted transpose."""
    Aw, _ = composite_glue_matrix(geo, phi, psi)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (Aw @ u) / (geo.measure * psi**2)


def stack_full(full):
    """Full symmetric array -> stacked ``(4N,)`` reduced vector."""
    return sym_reduce(full).ravel()


# ----------------------------------------------------------------------------
# exact discrete linearizations as sparse matrices
# ----------------------------------------------------------------------------

_SLOTS = (None, (0,), (1,), (0, 0), (0, 1), (1, 1))


def _unit_jet(p, slot, n, N):
    e = np.zeros((4, N))
    e[p] = 1.0
    unit = sym_full(e, n)
    g = np.zeros((n, n, N))
    dg = np.zeros((n, n, n, N))
    ddg = np.zeros((n, n, n, n, N))
    if slot is None:
        g[:] = unit
    elif len(slot) == 1:
        dg[slot[0]] = unit
    else:
        k, l = slot
        ddg[k, l] = unit
        ddg[l, k] = unit
    return Jet(g, dg, ddg)


def jet_linear_matrix(fn, grid, n, nin):
    """Sparse matrix of a map that is pointwise linear in the FD jets of its inputs.

    ``fn`` receives ``nin`` tensor jets and returns an ``(m, N)`` array.  The
    node-wise coefficients of each jet slot are read off with unit jets and
    combined with the grid's derivative matrices, so the result equals
    ``fn`` applied to ``reduced_jet`` of the inputs, to round-off.
    """
    N = grid.size
    ops = (sp.identity(N, format="csr"), grid.Dt, grid.Dz, grid.Dtt, grid.Dtz, grid.Dzz)
    zero = Jet(np.zeros((n, n, N)), np.zeros((n, n, n, N)), np.zeros((n, n, n, n, N)))
    cols = []
    m = None
    for b in range(nin):
        for p in range(4):
            block = 0
            for slot, op in zip(_SLOTS, ops):
                jets = [zero] * nin
                jets[b] = _unit_jet(p, slot, n, N)
                out = np.atleast_2d(fn(*jets))
                m = out.shape[0]
                block = block + sp.vstack([_diag(out[r]) @ op for r in range(m)])
            cols.append(block)
    return sp.hstack(cols).tocsr()


def linearized_scalar_matrix(geo):
    """Exact discrete ``P_g`` (N x 4N) acting on stacked reduced components."""
    return jet_linear_matrix(lambda hj: linearized_scalar(geo, hj), geo.grid, geo.n, 1)


def linearized_constraints_matrix(geo, Kj):
    """Exact discrete linearized constraint operator (3N x 8N) on stacked ``(Q, h)``.

    Output rows are ``(J_t, J_z, rho)``.
    """
    def fn(Qj, hj):
        J, rho = linearized_constraints(geo, Kj, Qj, hj)
        return np.vstack([J[:2], rho[None]])

    return jet_linear_matrix(fn, geo.grid, geo.n, 2)
