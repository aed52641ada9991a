"""Interpolation, sparse SPD solves, the Picard gluing iteration and its drivers.

The gluing equation on the half annulus ``A_{1,4}`` is

    R(g_chi + h) = R_chi,      h = psi^2 phi^4 P*_{g_chi} u,

with ``u`` vanishing (with its normal difference) on the two outermost node
rows of every edge.  Each Picard step solves the frozen-coefficient system
``P_{g_chi}(psi^2 phi^4 P*_{g_chi} du) = residual``; in matrix form
``A du = mu * residual`` with ``A = P*^T M(psi^2 phi^4) P*``, symmetric positive
definite on the free nodes.  All residuals are evaluated from differences
(no large curvatures are subtracted).
"""

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .errors import (ClosenessError, ConfigError, DegenerateMetricError, InsufficientDataError,
                     NoMassError, NonConvergenceError, OverlapError)
from .fields import ReducedSymTensor, check_positive, sym_full, sym_reduce
from .geometry import (Geometry, Jet, MetricSpec, build_metric, hyperbolic_inversion, mass_aspect,
                       metric_jet, reduced_jet, scalar_difference, scaling_pullback)
from .grid import build_grid
from .operators import (InitialData, adjoint_constraints_matrix, adjoint_scalar_matrix, constraint_difference,
                        constraint_fields, covector_scalar_mass, linearized_constraints_matrix,
                        linearized_scalar_matrix, tensor_mass)
from .weights import WeightConfig, cutoff_chi, defining_x, norm2_pointwise, phi_psi


# ----------------------------------------------------------------------------
# problem and report records
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GluingProblem:
    """Two metrics (or two InitialData) to be glued across ``A_{1,4}``.

    ``g`` is kept where ``chi = 0`` (``s <= chi_inner``) and ``g_hat`` where
    ``chi = 1`` (``s >= chi_outer``).
    """

    g: object
    g_hat: object
    cfg: WeightConfig = field(default_factory=WeightConfig)
    grid: object = None
    chi_inner: float = 2.0
    chi_outer: float = 3.0
    tol: float = 1e-8
    max_iter: int = 20
    route: str = "auto"
    method: str = "direct"
    newton: bool = False
    consistent: bool = True
    dirichlet_width: int = 2

    def __post_init__(self):
        if self.grid is None:
            object.__setattr__(self, "grid", build_grid("annulus", (64, 64), "log", 0.02))
        if self.grid.kind != "annulus":
            raise ConfigError("gluing runs on the annulus chart")
        if self.method not in ("direct", "cg"):
            raise ConfigError(f"unknown linear solver {self.method!r}")
        if self.max_iter < 1 or not self.tol > 0:
            raise ConfigError("need max_iter >= 1 and tol > 0")
        self.cfg.check_gluing()

    @property
    def full_system(self):
        return isinstance(self.g, InitialData)


@dataclass(eq=False)
class SolveReport:
    """Diagnostics of one gluing solve."""

    residual_history: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    h_norm: float = 0.0
    h_weighted_norm: float = 0.0
    h_max: float = 0.0
    source_norm: float = 0.0
    ratio: float = float("nan")
    decay: dict = field(default_factory=dict)
    masses: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self):
        d = asdict(self)
        return {k: _jsonable(v) for k, v in d.items()}


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


# ----------------------------------------------------------------------------
# jets of products and the interpolated metric
# ----------------------------------------------------------------------------

def scalar_jet(f, grid, n):
    """``(f, df, ddf)`` of a node scalar with zero transverse partials."""
    d = grid.d(f)
    dd = grid.dd(f)
    df = np.zeros((n,) + f.shape)
    ddf = np.zeros((n, n) + f.shape)
    df[:2] = d
    ddf[:2, :2] = dd
    return f, df, ddf


def product_jet(c, jet):
    """Jet of ``c * T`` for a scalar jet ``c = (f, df, ddf)`` and a tensor jet."""
    f, df, ddf = c
    g = f * jet.g
    dg = f * jet.dg + np.einsum("kZ,ijZ->kijZ", df, jet.g)
    ddg = (f * jet.ddg + np.einsum("klZ,ijZ->klijZ", ddf, jet.g)
           + np.einsum("kZ,lijZ->klijZ", df, jet.dg) + np.einsum("lZ,kijZ->klijZ", df, jet.dg))
    return Jet(g, dg, ddg)


def _diff(a, b):
    return Jet(a.g - b.g, a.dg - b.dg, a.ddg - b.ddg)


@dataclass(eq=False)
class Interpolation:
    """``g_chi``, its geometry, the target ``R_chi`` and the defect ``R_chi - R(g_chi)``."""

    chi: np.ndarray
    geo: Geometry
    target: np.ndarray
    defect: np.ndarray
    source: np.ndarray  # R(g_hat) - R(g)
    K_jet: Optional[Jet] = None
    defect_J: Optional[np.ndarray] = None
    source_J: Optional[np.ndarray] = None


def _chi_parts(grid, n, inner, outer):
    chi = cutoff_chi(grid.s, inner, outer)
    c = scalar_jet(chi, grid, n)
    one_minus = (1 - c[0], -c[1], -c[2])
    return chi, c, one_minus


def interpolate(g, g_hat, grid, inner=2.0, outer=3.0, route="auto"):
    """``g_chi = chi g_hat + (1 - chi) g`` and ``R_chi = chi R(g_hat) + (1 - chi) R(g)``.

    The defect ``R_chi - R(g_chi)`` is computed as
    ``chi dR(g_chi; (1-chi) d) + (1-chi) dR(g_chi; -chi d)`` with
    ``d = g_hat - g``, which vanishes identically where ``chi`` is 0 or 1.
    """
    if g.n != g_hat.n:
        raise ConfigError("metrics must have the same dimension")
    n = g.n
    chi, c, om = _chi_parts(grid, n, inner, outer)
    J0, J1 = metric_jet(g, grid, route), metric_jet(g_hat, grid, route)
    d = _diff(J1, J0)
    jet = J0 + product_jet(c, d)
    try:
        geo = Geometry(jet, grid)
        check_positive(sym_reduce(jet.g))
    except DegenerateMetricError as exc:
        raise ClosenessError("interpolated metric is not positive definite: g_hat too far from g") from exc
    up = scalar_difference(geo, product_jet(om, d))
    down = scalar_difference(geo, product_jet(c, d).scale(-1.0))
    defect = chi * up + (1 - chi) * down
    source = scalar_difference(Geometry(J0, grid), d)
    target = geo.scalar + defect
    return Interpolation(chi=chi, geo=geo, target=target, defect=defect, source=source)


def interpolate_data(data, data_hat, grid, inner=2.0, outer=3.0, route="auto"):
    """Interpolate two InitialData (same ``Lambda``); defects for both constraint rows."""
    if data.n != data_hat.n:
        raise ConfigError("data must have the same dimension")
    if not np.isclose(data.Lambda, data_hat.Lambda):
        raise ConfigError("both data sets must share Lambda (same tau)")
    n = data.n
    chi, c, om = _chi_parts(grid, n, inner, outer)
    geo0, K0 = data.jets(grid, route)
    geo1, K1 = data_hat.jets(grid, route)
    d, dK = _diff(geo1.jet, geo0.jet), _diff(K1, K0)
    jet = geo0.jet + product_jet(c, d)
    Kc = K0 + product_jet(c, dK)
    try:
        geo = Geometry(jet, grid)
    except DegenerateMetricError as exc:
        raise ClosenessError("interpolated metric is not positive definite") from exc
    Ju, ru = constraint_difference(geo, Kc, product_jet(om, dK), product_jet(om, d))
    Jd, rd = constraint_difference(geo, Kc, product_jet(c, dK).scale(-1.0), product_jet(c, d).scale(-1.0))
    Js, rs = constraint_difference(geo0, K0, dK, d)
    J0, r0 = constraint_fields(geo0, K0, data.Lambda)
    J1, r1 = constraint_fields(geo1, K1, data.Lambda)
    target = chi * r1 + (1 - chi) * r0
    return Interpolation(chi=chi, geo=geo, target=target, defect=chi * ru + (1 - chi) * rd, source=rs,
                         K_jet=Kc, defect_J=chi * Ju + (1 - chi) * Jd, source_J=Js)


# ----------------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------------

class LinearSolver:
    """SPD solver with symmetric Jacobi scaling: sparse LU or preconditioned CG."""

    def __init__(self, A, method="direct", tol=1e-12, maxiter=None):
        A = sp.csr_matrix(A)
        dg = A.diagonal()
        if np.any(dg <= 0):
            raise NonConvergenceError("operator has a non-positive diagonal entry on the free nodes",
                                      {"min_diag": float(dg.min())})
        self.scale = 1.0 / np.sqrt(dg)
        S = sp.diags(self.scale)
        self.As = (S @ A @ S).tocsc()
        self.method = method
        self.tol = tol
        self.maxiter = maxiter
        self.iterations = []
        self._lu = spla.splu(self.As) if method == "direct" else None

    def solve(self, rhs):
        b = self.scale * rhs
        if not np.any(b):
            return np.zeros_like(rhs)
        if self._lu is not None:
            y = self._lu.solve(b)
        else:
            count = [0]

            def cb(_):
                count[0] += 1

            y, info = spla.cg(self.As, b, rtol=self.tol, atol=0.0, maxiter=self.maxiter, callback=cb)
            self.iterations.append(count[0])
            if info != 0:
                ritz = _smallest_ritz(self.As)
                raise NonConvergenceError("conjugate gradients stagnated (ill-conditioned operator)",
                                          {"iterations": count[0], "smallest_ritz": ritz})
        return self.scale * y


def _smallest_ritz(A, k=30):
    """Rough smallest-eigenvalue estimate from a short Lanczos run."""
    try:
        return float(spla.eigsh(A, k=1, which="SA", maxiter=k * 10, tol=1e-3, return_eigenvectors=False)[0])
    except Exception:  # noqa: BLE001 - diagnostic only
        return float("nan")


def linear_solve(L, rhs, tol=1e-12, method="direct"):
    """Solve the SPD system ``L u = rhs`` (Jacobi-scaled LU or PCG)."""
    return LinearSolver(L, method, tol).solve(np.asarray(rhs, dtype=float))


# ----------------------------------------------------------------------------
# decay fits
# ----------------------------------------------------------------------------

def _lstsq_slopes(cols, y, min_points):
    if y.size < min_points:
        raise InsufficientDataError(f"only {y.size} usable points in a fitting strip (need {min_points})")
    X = np.column_stack([np.ones_like(y)] + cols)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef[1:]


def decay_fit(field, df, x_strip=None, z_strip=None, rho_max=None, min_points=6, floor=1e-300):
    """Exponents ``(p_x, p_z, p_rho)`` of ``|field| ~ x^{p_x} z^{p_z} rho^{p_rho}``.

    * ``p_x``: fit of ``log|f|`` against ``(log x, log z)`` on the strip
      ``x <= z / 4`` with ``z`` in ``z_strip`` (there ``rho ~ z``).
    * ``p_z``: fit against ``(log z, log x)`` on ``z <= x / 4`` with ``x`` in
      ``x_strip`` (there ``rho ~ x``).
    * ``p_rho``: slope along the diagonal ``x ~ z`` minus ``p_x + p_z``.

    Nodes with ``|f| <= floor`` (e.g. sign changes) are masked.
    """
    f = np.abs(np.asarray(field, dtype=float))
    x, z, rho = df.x, df.z, df.rho
    ok = (f > floor) & (x > 0)
    if ok.sum() < min_points:
        raise InsufficientDataError(f"only {ok.sum()} nonzero samples (need {min_points})")
    if z_strip is None:
        zc = np.median(z[ok])
        z_strip = (zc / 1.5, zc * 1.5)
    if x_strip is None:
        xc = 0.5 * np.max(x)
        x_strip = (xc / 1.5, xc * 1.5)
    lf, lx, lz = np.log(np.where(ok, f, 1.0)), np.log(np.where(x > 0, x, 1.0)), np.log(z)
    m = ok & (x <= z / 4) & (z >= z_strip[0]) & (z <= z_strip[1])
    p_x = _lstsq_slopes([lx[m], lz[m]], lf[m], min_points)[0]
    m = ok & (z <= x / 4) & (x >= x_strip[0]) & (x <= x_strip[1])
    p_z = _lstsq_slopes([lz[m], lx[m]], lf[m], min_points)[0]
    q = x / z
    m = ok & (q >= 0.8) & (q <= 1.25)
    if rho_max is not None:
        m &= rho <= rho_max
    slope = _lstsq_slopes([np.log(rho[m])], lf[m], min_points)[0]
    return float(p_x), float(p_z), float(slope - p_x - p_z)


def tensor_magnitude(T, geo):
    """Pointwise ``|T|_g`` of a full covariant array (or scalar)."""
    return np.sqrt(np.maximum(norm2_pointwise(T, geo.ginv), 0.0))


# ----------------------------------------------------------------------------
# the Picard iteration
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class _System:
    Pstar: sp.csr_matrix
    W: np.ndarray  # per-row-block weights of the output tensors
    A: sp.csr_matrix
    free: np.ndarray  # free unknown indices
    solver: LinearSolver


def _free_indices(mask, blocks):
    N = mask.size
    free = np.flatnonzero(~mask)
    return np.concatenate([free + b * N for b in range(blocks)])


def _assemble(geo, Pstar, weights, mask, blocks, method):
    Mout = sp.block_diag([tensor_mass(geo, w) for w in weights], format="csr")
    A = (Pstar.T @ Mout @ Pstar).tocsr()
    free = _free_indices(mask, blocks)
    Aff = A[free][:, free]
    return _System(Pstar, np.concatenate([np.tile(w, 4) for w in weights]), A, free,
                   LinearSolver(Aff, method))


def _weighted_norm(vals, mu, inv_psi2, interior):
    return float(np.sqrt(np.sum((mu * inv_psi2 * vals)[interior])))


class _TangentSolver:
    """LU of the exact discrete tangent ``T W P*`` restricted to the free nodes.

    Rows are scaled by the residual weight ``sqrt(mu) / psi`` and columns by
    the Jacobi scaling of the SPD composite, which keeps the pivoting
    meaningful across the many decades spanned by the weights.
    """

    def __init__(self, T, system, row_weight):
        B = (T @ sp.diags(system.W) @ system.Pstar).tocsr()
        f = system.free
        self.free = f
        self.size = system.Pstar.shape[1]
        self.rw = row_weight[f]
        self.cw = system.solver.scale
        Bs = sp.diags(self.rw) @ B[f][:, f] @ sp.diags(self.cw)
        self.lu = spla.splu(sp.csc_matrix(Bs))

    def solve(self, r):
        du = np.zeros(self.size)
        du[self.free] = self.cw * self.lu.solve(self.rw * r[self.free])
        return du


def _picard(problem, system, residual, sqnorm, mass, tangent, positive, interior, mu, inv_psi2, report):
    """Damped frozen-operator iteration shared by the scalar and full systems.

    ``residual(v) -> (r, out)``; ``tangent(out_or_None)`` returns the exact
    discrete linearization of the constraint map (rows ordered like ``r``).
    With ``consistent`` the step solves ``T W P* dv = r`` with ``T`` frozen at
    the interpolated data and refreshed at the current iterate only when a
    step contracts the residual by less than one half; ``newton`` refreshes
    every step.  Otherwise the SPD system ``A dv = M r`` is used.
    """
    v = np.zeros(system.Pstar.shape[1])
    blocks = v.size // mu.size
    row_weight = np.tile(np.sqrt(mu * inv_psi2), blocks)
    row_weight[row_weight == 0] = 1.0
    r, out = residual(v)
    r0 = _weighted_norm(sqnorm(r), mu, inv_psi2, interior)
    report.residual_history.append(1.0 if r0 > 0 else 0.0)
    report.converged = r0 == 0.0
    frozen = None
    while not report.converged and report.iterations < problem.max_iter:
        if problem.newton:
            dv = _TangentSolver(tangent(out), system, row_weight).solve(r)
        elif problem.consistent:
            if frozen is None:
                frozen = _TangentSolver(tangent(None if report.iterations == 0 else out), system, row_weight)
                report.extra["tangent_refreshes"] = report.extra.get("tangent_refreshes", -1) + 1
            dv = frozen.solve(r)
        else:
            dv = np.zeros_like(v)
            dv[system.free] = system.solver.solve((mass(r))[system.free])
        step, prev = 1.0, report.residual_history[-1]
        rel = np.inf
        for _ in range(8):
            tv = v + step * dv
            tout = None
            try:
                tr, tout = residual(tv)
                if not positive(tout):
                    raise DegenerateMetricError("positivity lost")
                rel = _weighted_norm(sqnorm(tr), mu, inv_psi2, interior) / r0
            except DegenerateMetricError:
                rel = np.inf
            if np.isfinite(rel) and (rel <= prev or report.iterations == 0):
                break
            step *= 0.5
        if not np.isfinite(rel):
            raise NonConvergenceError("positivity lost or residual non-finite after step halving", report)
        if problem.consistent and rel > 0.5 * prev:
            frozen = None  # slow contraction: re-linearize at the current iterate next step
        v, r, out = tv, tr, tout
        report.iterations += 1
        report.residual_history.append(float(rel))
        report.converged = rel <= problem.tol
    return v, out


def glue_scalar(problem):
    """Solve ``R(g_chi + h) = R_chi`` on the annulus; returns ``(h, SolveReport)``.

    ``h`` is a ReducedSymTensor of coordinate components, zero at ``s = 1`` and
    ``s = 4`` (where the weights vanish) and extended by zero outside.
    """
    t0 = time.perf_counter()
    if problem.full_system:
        raise ConfigError("use glue_constraints for InitialData pairs")
    grid, cfg = problem.grid, problem.cfg
    n = problem.g.n
    if cfg.n != n:
        raise ConfigError("weight configuration dimension differs from the metrics")
    it = interpolate(problem.g, problem.g_hat, grid, problem.chi_inner, problem.chi_outer, problem.route)
    geo = it.geo
    df = defining_x(grid)
    phi, psi = phi_psi(df, cfg)
    mask = grid.boundary_mask(problem.dirichlet_width)
    interior = ~mask
    mu = geo.measure
    with np.errstate(divide="ignore"):
        inv_psi2 = np.where(interior, 1.0 / psi**2, 0.0)
    system = _assemble(geo, adjoint_scalar_matrix(geo), [phi**4 * psi**2], mask, 1, problem.method)
    N = grid.size
    g_comps = sym_reduce(geo.jet.g)

    def residual(v):
        hc = (system.W * (system.Pstar @ v)).reshape(4, N)
        return it.defect - scalar_difference(geo, reduced_jet(hc, grid, n)), hc

    def tangent(hc):
        base = geo if hc is None else Geometry(geo.jet + reduced_jet(hc, grid, n), grid)
        return linearized_scalar_matrix(base)

    def positive(hc):
        try:
            check_positive(g_comps + hc)
            return True
        except DegenerateMetricError:
            return False

    report = SolveReport(source_norm=float(np.sqrt(np.sum(mu * it.source**2 * df.z ** (-2 * cfg.b)))))
    _, hcomps = _picard(problem, system, residual, lambda r: r * r, lambda r: mu * r, tangent, positive,
                        interior, mu, inv_psi2, report)
    h = ReducedSymTensor(hcomps, n)
    _finish_report(report, h.full(), geo, df, phi, psi, interior, cfg, t0)
    report.extra.update(dict(target_min=float(it.target[interior].min()), target_max=float(it.target[interior].max()),
                             outside_max=float(np.max(np.abs(hcomps[:, _edge_s(grid)])))))
    if not report.converged:
        raise NonConvergenceError(
            f"gluing iteration did not reach tol={problem.tol} in {problem.max_iter} steps "
            f"(last relative residual {report.residual_history[-1]:.3e})", report)
    return h, report


def _edge_s(grid):
    return np.concatenate([grid.edge_nodes("xi0"), grid.edge_nodes("xi1")])


def _finish_report(report, hfull, geo, df, phi, psi, interior, cfg, t0, name="h"):
    mag = tensor_magnitude(hfull, geo)
    mu = geo.measure
    report.h_norm = float(np.sqrt(np.sum(mu * mag**2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        wmag = np.where(interior, mag / (psi * phi**2), 0.0)
    report.h_weighted_norm = float(np.sqrt(np.sum(mu * wmag**2)))
    report.h_max = float(mag.max())
    if report.source_norm > 0:
        report.ratio = report.h_norm / report.source_norm
    try:
        report.decay[name] = dict(zip(("x", "z", "rho"), decay_fit(np.where(interior, mag, 0.0), df)))
    except InsufficientDataError as exc:
        report.decay[name] = {"error": str(exc)}
    report.wall_time = time.perf_counter() - t0


def expected_decay(cfg, shift=2):
    """Exponents ``(a - n/2 + shift, b, c + n/2 - shift)`` of the weighted-embedding bounds."""
    a, b, c = cfg.exponents()
    return a - cfg.n / 2 + shift, b, c + cfg.n / 2 - shift


# ----------------------------------------------------------------------------
# full constraint system
# ----------------------------------------------------------------------------

def glue_constraints(problem):
    """Solve ``S((K, g)_chi + (dK, dg)) = S_chi`` with ``(dK, dg) = psi^2 Phi^2 P*(Y, N)``.

    Returns ``((dK, dg), SolveReport)`` as ReducedSymTensors.
    """
    t0 = time.perf_counter()
    if not problem.full_system:
        raise ConfigError("glue_constraints needs InitialData")
    grid, cfg = problem.grid, problem.cfg
    n = problem.g.n
    it = interpolate_data(problem.g, problem.g_hat, grid, problem.chi_inner, problem.chi_outer, problem.route)
    geo, Kc = it.geo, it.K_jet
    df = defining_x(grid)
    phi, psi = phi_psi(df, cfg)
    mask = grid.boundary_mask(problem.dirichlet_width)
    interior = ~mask
    interior3 = np.tile(interior, 3)
    mu = geo.measure
    with np.errstate(divide="ignore"):
        inv_psi2 = np.where(interior, 1.0 / psi**2, 0.0)
    Min = covector_scalar_mass(geo)
    system = _assemble(geo, adjoint_constraints_matrix(geo, Kc), [psi**2 * phi**2, psi**2 * phi**4],
                       mask, 3, problem.method)
    N = grid.size
    A2 = geo.ginv[:2, :2]
    g_comps = sym_reduce(geo.jet.g)

    def residual(v):
        out = (system.W * (system.Pstar @ v)).reshape(8, N)
        Qj, hj = reduced_jet(out[:4], grid, n), reduced_jet(out[4:], grid, n)
        J, rho = constraint_difference(geo, Kc, Qj, hj)
        return np.concatenate([it.defect_J[0] - J[0], it.defect_J[1] - J[1], it.defect - rho]), out

    def sqnorm(rv):
        """Pointwise ``|J|_g^2 + rho^2``."""
        Jt, Jz, rho = rv[:N], rv[N:2 * N], rv[2 * N:]
        return A2[0, 0] * Jt * Jt + 2 * A2[0, 1] * Jt * Jz + A2[1, 1] * Jz * Jz + rho * rho

    def tangent(out):
        if out is None:
            return linearized_constraints_matrix(geo, Kc)
        base = Geometry(geo.jet + reduced_jet(out[4:], grid, n), grid)
        return linearized_constraints_matrix(base, Kc + reduced_jet(out[:4], grid, n))

    def positive(out):
        try:
            check_positive(g_comps + out[4:])
            return True
        except DegenerateMetricError:
            return False

    src = np.concatenate([it.source_J[0], it.source_J[1], it.source])
    report = SolveReport(source_norm=float(np.sqrt(np.sum(mu * sqnorm(src) * df.z ** (-2 * cfg.b)))))
    _, out = _picard(problem, system, residual, sqnorm, lambda r: Min @ r, tangent, positive,
                     interior, mu, inv_psi2, report)
    dK = ReducedSymTensor(out[:4], n)
    dg = ReducedSymTensor(out[4:], n)
    _finish_report(report, dg.full(), geo, df, phi, psi, interior, cfg, t0, name="dg")
    magK = tensor_magnitude(dK.full(), geo)
    try:
        report.decay["dK"] = dict(zip(("x", "z", "rho"), decay_fit(np.where(interior, magK, 0.0), df)))
    except InsufficientDataError as exc:
        report.decay["dK"] = {"error": str(exc)}
    tau = problem.g.kappa
    dev = tensor_magnitude(dK.full() - tau * dg.full(), geo)
    nK = float(np.sqrt(np.sum(mu * magK**2)))
    report.extra.update(dict(dK_norm=nK, trace_tracking=float(np.sqrt(np.sum(mu * dev**2))) / max(nK, 1e-300)))
    if not report.converged:
        raise NonConvergenceError(
            f"gluing iteration did not reach tol={problem.tol} in {problem.max_iter} steps "
            f"(last relative residual {report.residual_history[-1]:.3e})", report)
    return (dK, dg), report


# ----------------------------------------------------------------------------
# lambda exchange and boundary connected sums
# ----------------------------------------------------------------------------

def glued_metric(g, g_hat, h, grid, inner=2.0, outer=3.0, scale=1.0):
    """Sampler-backed MetricSpec of the glued metric in the original coordinates.

    The solve was done for the pullbacks by ``(t, z) -> (scale t, scale z)``;
    the glued metric equals ``g`` on the half ball of radius ``scale`` and
    ``g_hat`` outside radius ``4 scale``.  ``h`` is interpolated (cubic, in
    the ``(s, alpha)`` node lattice) as ``z^2 h`` to obtain ``g_tilde``.
    """
    n = g.n
    S = grid.s.reshape(grid.shape)[:, 0]
    Al = grid.alpha.reshape(grid.shape)[0, :]
    ht = (grid.z**2 * h.comps).reshape((4,) + grid.shape)
    interps = [RegularGridInterpolator((S, Al), ht[k], method="cubic", bounds_error=False, fill_value=0.0)
               for k in range(4)]
    s_in, s_out = S[0], S[-1]

    def sampler(t, z):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        tp, zp = t / scale, z / scale
        sp_ = np.sqrt(tp * tp + zp * zp)
        ap = np.arctan2(zp, tp)
        chi = cutoff_chi(sp_, inner, outer)
        out = (1 - chi) * g.tilde(t, z) + chi * g_hat.tilde(t, z)
        inside = (sp_ >= s_in) & (sp_ <= s_out) & (ap >= Al[0]) & (ap <= Al[-1])
        if np.any(inside):
            pts = np.column_stack([sp_[inside], ap[inside]])
            for k in range(4):
                out[k, inside] += np.asarray(interps[k](pts))
        return out

    return MetricSpec("glued", n, dict(scale=scale), sigma=g_hat.sigma, sampler=sampler)


def lambda_exchange(g, g_hat, lams, base=None, mass_kwargs=None):
    """Glue ``g`` (kept near the origin) to ``g_hat`` at scales ``lam`` around ``(0, 0)``.

    For each ``lam`` both metrics are pulled back by ``(t, z) -> (lam t, lam z)``
    and glued on the fixed annulus.  Returns a dict with per-``lam`` reports,
    norms of ``h_lam`` and the fitted log-log slope; when ``g_hat`` carries a
    mass proxy, the glued metrics' proxies are reported too.
    """
    base = base if base is not None else GluingProblem(g, g_hat)
    mass_kwargs = dict(mass_kwargs or {})
    out = {"lams": [], "h_norm": [], "residual": [], "reports": [], "mass_glued": [], "errors": []}
    try:
        out["mass_g_hat"] = mass_aspect(g_hat, resid_tol=np.inf, **mass_kwargs)
        out["mass_g"] = mass_aspect(g, resid_tol=np.inf, **mass_kwargs)
    except (NoMassError, ConfigError):
        out["mass_g_hat"] = out["mass_g"] = None
    for lam in lams:
        gl, ghl = scaling_pullback(g, lam), scaling_pullback(g_hat, lam)
        prob = GluingProblem(gl, ghl, base.cfg, base.grid, base.chi_inner, base.chi_outer, base.tol,
                             base.max_iter, base.route, base.method, base.newton, base.consistent, base.dirichlet_width)
        try:
            h, rep = glue_scalar(prob)
        except NonConvergenceError as exc:
            out["errors"].append((lam, str(exc)))
            continue
        out["lams"].append(lam)
        out["h_norm"].append(rep.h_norm)
        out["residual"].append(rep.residual_history[-1])
        out["reports"].append(rep)
        if out["mass_g_hat"] is not None:
            G = glued_metric(g, g_hat, h, base.grid, base.chi_inner, base.chi_outer, scale=lam)
            out["mass_glued"].append(mass_aspect(G, resid_tol=np.inf, **mass_kwargs))
    lam_arr, hn = np.array(out["lams"]), np.array(out["h_norm"])
    good = hn > 0
    out["slope"] = float(np.polyfit(np.log(lam_arr[good]), np.log(hn[good]), 1)[0]) if good.sum() >= 2 else float("nan")
    return out


def maskit_assemble(data1, data2, eps, grid=None, tol=1e-8, route="tilde"):
    """Boundary connected sum of two data sets that are exactly hyperbolic near ``(0, 0)``.

    ``data1`` must be hyperbolic (with ``K = tau g``) on the half ball of radius
    ``eps`` and ``data2`` likewise.  ``data1`` is inverted about the origin
    and rescaled by ``eps / 2`` so that it is hyperbolic outside radius 2;
    ``data2`` is rescaled by ``eps / 4`` so that it is hyperbolic inside
    radius 4; the two are identified across ``A_{2,4}``.  Returns the
    assembled InitialData and a report with the constraint residual on the
    neck and the coincidence checks.
    """
    if not np.isclose(data1.kappa, data2.kappa) or data1.n != data2.n:
        raise ConfigError("both data sets need K = tau g with the same tau and dimension")
    n = data1.n
    for d in (data1, data2):
        if d.K is not None:
            raise ConfigError("data must have K = tau g")
    m1 = hyperbolic_inversion(data1.g, center=0.0, scale=eps / 2, check_radius=eps, tol=tol)
    m2 = scaling_pullback(data2.g, eps / 4)

    def sampler(t, z):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        s = np.sqrt(t * t + z * z)
        a, b = m1.tilde(t, z), m2.tilde(t, z)
        return np.where(s < 3.0, a, b)

    G = MetricSpec("maskit", n, dict(eps=eps), sampler=sampler, slice_only=m1.slice_only)
    # the neck: both pieces must be exactly hyperbolic there
    grid = grid if grid is not None else build_grid("annulus", (48, 48), "log", 0.02, s_range=(2.0, 4.0))
    ident = np.array([1.0, 0.0, 1.0, 1.0])[:, None]
    dev1 = float(np.max(np.abs(m1.tilde(grid.t, grid.z) - ident)))
    dev2 = float(np.max(np.abs(m2.tilde(grid.t, grid.z) - ident)))
    if max(dev1, dev2) > tol:
        raise OverlapError(f"neck is not exactly hyperbolic (deviation {max(dev1, dev2):.3e})")
    neck = MetricSpec("neck", n, {}, sampler=sampler)
    glued = InitialData(G, tau=data1.tau, Lambda=data1.Lambda, K_scale=data1.K_scale)
    neck_data = InitialData(neck, tau=data1.tau, Lambda=data1.Lambda, K_scale=data1.K_scale)
    geo, Kj = neck_data.jets(grid, route)
    J, rho = constraint_fields(geo, Kj, data1.Lambda)
    # coincidence with the originals outside the eps half balls
    rr, aa = np.meshgrid(np.geomspace(4.0, 40.0, 15), np.linspace(0.05, np.pi - 0.05, 15))
    tq, zq = (rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()
    co2 = float(np.max(np.abs(m2.tilde(tq, zq) - data2.g.tilde(eps / 4 * tq, eps / 4 * zq))))
    report = dict(neck_J=float(np.max(np.abs(J))), neck_rho=float(np.max(np.abs(rho))),
                  neck_deviation=max(dev1, dev2), coincide_2=co2)
    # data1 side: points at radius < 2 correspond, after inversion, to |q| > eps in data1's chart
    rr1 = np.geomspace(0.05, 1.9, 15)
    r1, a1 = np.meshgrid(rr1, np.linspace(0.05, np.pi - 0.05, 15))
    t1, z1 = (r1 * np.cos(a1)).ravel(), (r1 * np.sin(a1)).ravel()
    from .geometry import inversion_map
    tq1, zq1 = inversion_map(t1, z1)
    report["preimage_radius_min"] = float(np.min(np.hypot(eps / 2 * tq1, eps / 2 * zq1)))
    report["coincide_1"] = float(np.max(np.abs(G.tilde(t1, z1) - m1.tilde(t1, z1))))
    return glued, report
