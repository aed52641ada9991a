"""Defining functions, the weights phi and psi, the cutoff, and weighted norms.

On the annulus chart the distance-like function to the two hemispheres is
``x(s) = (s - 1)(4 - s) / 3``; on rectangular (corner-model) charts it is the
coordinate ``t`` itself.  With ``rho = sqrt(x^2 + z^2)``,

    phi = x / rho,        psi = x^a z^b rho^c

(or ``x^{a-1} z^b rho^{c+1}`` with the shifted convention).
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .fields import ReducedSymTensor, ReducedVector


@dataclass(frozen=True)
class WeightConfig:
    """Weight exponents and the data they are used with.

    Defaults follow ``a = k + n + 2`` and ``c = 3 - n / 2``.
    """

    a: float = None
    b: float = 1.0
    c: float = None
    sigma: float = 3.0
    n: int = 3
    k: int = 2
    shifted: bool = False

    def __post_init__(self):
        if self.a is None:
            object.__setattr__(self, "a", float(self.k + self.n + 2))
        if self.c is None:
            object.__setattr__(self, "c", 3.0 - self.n / 2)
        for name in ("a", "b", "c", "sigma"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"weight exponent {name} must be finite")

    def exponents(self):
        """``(a, b, c)`` actually used in ``psi``."""
        if self.shifted:
            return self.a - 1, self.b, self.c + 1
        return self.a, self.b, self.c

    def check_gluing(self):
        """Raise unless the configuration is admissible for the gluing solve."""
        n = self.n
        if not 0 <= self.b <= (n + 1) / 2:
            raise ConfigError(f"gluing needs 0 <= b <= (n+1)/2, got b={self.b}")
        if not self.sigma > (n - 1) / 2 + self.b:
            raise ConfigError("gluing needs sigma > (n-1)/2 + b")
        if not self.k > n / 2:
            raise ConfigError("gluing needs k > n/2")
        return self

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class DefiningFunctions:
    """Node values of ``x``, ``z`` and ``rho`` (plus ``dx/ds`` on the annulus)."""

    x: np.ndarray
    z: np.ndarray
    rho: np.ndarray


def x_of_s(s):
    return (s - 1.0) * (4.0 - s) / 3.0


def defining_x(grid):
    """Defining functions on an annulus (``x(s)``) or corner-model rectangle (``x = t``)."""
    if grid.kind == "annulus":
        x = x_of_s(grid.s)
        # clean round-off at the two hemispheres
        x[np.isclose(grid.s, 1.0, atol=1e-14) | np.isclose(grid.s, 4.0, atol=1e-14)] = 0.0
    else:
        x = grid.t.copy()
    return DefiningFunctions(x=x, z=grid.z.copy(), rho=np.sqrt(x * x + grid.z**2))


def phi_psi(df, cfg):
    """Node values of ``phi = x / rho`` and ``psi``."""
    a, b, c = cfg.exponents()
    phi = df.x / df.rho
    with np.errstate(divide="ignore", invalid="ignore"):
        psi = np.where(df.x > 0, df.x**a, 0.0 if a > 0 else np.inf) * df.z**b * df.rho**c
    return phi, psi


def cutoff_chi(s, inner=2.0, outer=3.0):
    """Smooth monotone step in ``s``: 0 below ``inner``, 1 above ``outer``.

    Built from ``f(u) = exp(-1/u)`` as ``f(u) / (f(u) + f(1 - u))``, which is
    symmetric about the midpoint, where it equals one half.
    """
    if not inner < outer:
        raise ConfigError("cutoff needs inner < outer")
    u = (np.asarray(s, dtype=float) - inner) / (outer - inner)

    def f(v):
        out = np.zeros_like(v)
        pos = v > 0
        out[pos] = np.exp(-1.0 / v[pos])
        return out

    fu, fv = f(u), f(1.0 - u)
    return fu / (fu + fv)


# ----------------------------------------------------------------------------
# norms
# ----------------------------------------------------------------------------

def _as_covariant(u, geo):
    if isinstance(u, ReducedSymTensor):
        return u.full()
    if isinstance(u, ReducedVector):
        full = u.full()
        return full if u.covariant else geo.lower1(full)
    return np.asarray(u, dtype=float)


def norm2_pointwise(T, ginv):
    """``|T|_g^2`` of a covariant tensor with node axis last."""
    r = T.ndim - 1
    if r == 0:
        return T * T
    up = T
    for s in range(r):
        up = np.moveaxis(np.einsum("abZ,b...Z->a...Z", ginv, np.moveaxis(up, s, 0)), 0, s)
    return np.sum(up * T, axis=tuple(range(r)))


def _check_finite(T, grid):
    bad = ~np.isfinite(T)
    if np.any(bad):
        node = int(np.flatnonzero(np.any(bad.reshape(-1, grid.size), axis=0))[0])
        raise FloatingPointError(f"non-finite field value at node {node} (t={grid.t[node]:.4g}, z={grid.z[node]:.4g})")


def derivative_stack(u, geo, k):
    """``[u, nabla u, ..., nabla^k u]`` as covariant arrays."""
    T = _as_covariant(u, geo)
    out = [T]
    for _ in range(k):
        T = geo.nabla(T)
        out.append(T)
    return out


def weighted_sobolev_norm(u, cfg, geo, k=0, phi=None, psi=None):
    """``(int sum_{i<=k} phi^{2i} |nabla^i u|^2 psi^2 dmu_g)^{1/2}`` by trapezoid quadrature.

    ``phi`` and ``psi`` default to the weights of ``cfg`` on the chart of
    ``geo.grid``; pass arrays (e.g. ones) to override.
    """
    grid = geo.grid
    if phi is None or psi is None:
        p, q = phi_psi(defining_x(grid), cfg)
        phi = p if phi is None else phi
        psi = q if psi is None else psi
    stack = derivative_stack(u, geo, k)
    _check_finite(stack[0], grid)
    dens = 0.0
    for i, T in enumerate(stack):
        dens = dens + phi ** (2 * i) * norm2_pointwise(T, geo.ginv)
    return float(np.sqrt(np.sum(dens * psi**2 * geo.measure)))


def weighted_holder_seminorms(u, cfg, geo, k=0, alpha=0.5):
    """Discrete evaluation of the weighted ``C^{k, alpha}_{phi, phi}`` norm.

    Sup terms ``sup psi phi^i |nabla^i u|_g`` for ``i <= k`` plus the Hoelder
    quotient of ``nabla^k u`` over neighbouring node pairs whose geodesic
    distance (estimated at the midpoint) is at most ``phi / 2``.  Being a
    maximum over finitely many pairs it is a lower bound for the continuum
    norm.
    """
    grid = geo.grid
    phi, psi = phi_psi(defining_x(grid), cfg)
    stack = derivative_stack(u, geo, k)
    total = 0.0
    for i, T in enumerate(stack):
        total += float(np.max(psi * phi**i * np.sqrt(norm2_pointwise(T, geo.ginv))))
    T = stack[-1].reshape(-1, grid.size)
    n1, n2 = grid.shape
    idx = np.arange(grid.size).reshape(grid.shape)
    pairs = [(idx[:-1, :].ravel(), idx[1:, :].ravel()), (idx[:, :-1].ravel(), idx[:, 1:].ravel())]
    quotient = 0.0
    for p, q in pairs:
        dt = grid.t[q] - grid.t[p]
        dz = grid.z[q] - grid.z[p]
        gm = 0.5 * (geo.g[:2, :2, p] + geo.g[:2, :2, q])
        dist = np.sqrt(gm[0, 0] * dt * dt + 2 * gm[0, 1] * dt * dz + gm[1, 1] * dz * dz)
        ok = dist <= 0.5 * phi[p]
        if not np.any(ok):
            continue
        diff = np.sqrt(np.sum((T[:, q] - T[:, p]) ** 2, axis=0))
        # component differences measured in an orthonormalized scale at p
        scale = grid.z[p] ** (stack[-1].ndim - 1)
        val = psi[p] * phi[p] ** (k + alpha) * scale * diff / np.maximum(dist, 1e-300) ** alpha
        quotient = max(quotient, float(np.max(val[ok])))
    return total + quotient


# ----------------------------------------------------------------------------
# weight calculus on the corner model
# ----------------------------------------------------------------------------

def weight_calculus(n, A, B, C):
    """Closed-form coefficients for ``v = x^A z^B rho^C`` on the hyperbolic corner model.

    In the model ``g = z^{-2}(dx^2 + dz^2 + dy^2)`` with ``x`` a boundary
    coordinate:

        v^{-1} Delta v = L_x z^2/x^2 + L_0 + L_rho z^2/rho^2,
        |dv|^2 / v^2  = A^2 z^2/x^2 + B^2 + (C^2 + 2AC + 2BC) z^2/rho^2.
    """
    return {
        "laplacian": {"z2/x2": A * A - A, "const": B * B + (1 - n) * B,
                      "z2/rho2": C * C + 2 * A * C + 2 * B * C + (2 - n) * C},
        "gradient": {"z2/x2": A * A, "const": B * B, "z2/rho2": C * C + 2 * A * C + 2 * B * C},
    }


def evaluate_calculus(coeffs, df):
    """Evaluate a coefficient dictionary from ``weight_calculus`` at nodes."""
    x2 = np.where(df.x > 0, df.x**2, np.inf)
    z2 = df.z**2
    return coeffs["z2/x2"] * z2 / x2 + coeffs["const"] + coeffs["z2/rho2"] * z2 / df.rho**2


def calculus_residual(geo, n, A, B, C):
    """FD ``v^{-1} Delta_g v`` minus the closed-form leading part, at every node."""
    df = defining_x(geo.grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = df.x**A * df.z**B * df.rho**C
        lap = geo.laplacian(v) / v
    return lap - evaluate_calculus(weight_calculus(n, A, B, C)["laplacian"], df)


def lcond_constants(geo, cfg, orders=(1, 2)):
    """Measured ``sup phi^{i-1}|nabla^i phi|_g`` and ``sup phi^i psi^{-1}|nabla^i psi|_g``.

    Suprema are over nodes with ``x > 0``; they should stay bounded under
    refinement for the admissible weights.
    """
    df = defining_x(geo.grid)
    phi, psi = phi_psi(df, cfg)
    inner = df.x > 0
    out = {}
    sphi, spsi = derivative_stack(phi, geo, max(orders)), derivative_stack(psi, geo, max(orders))
    for i in orders:
        with np.errstate(divide="ignore", invalid="ignore"):
            a = phi ** (i - 1) * np.sqrt(norm2_pointwise(sphi[i], geo.ginv))
            b = phi**i * np.sqrt(norm2_pointwise(spsi[i], geo.ginv)) / psi
        out[f"phi_{i}"] = float(np.max(a[inner]))
        out[f"psi_{i}"] = float(np.max(b[inner]))
    return out


def weight_factorization(x, z, cfg):
    """``(x^{2a} z^{2b} rho^{2c}, z^{2(a+b+c)} h(x/z))`` with ``h(q) = q^{2a}(1+q^2)^c``."""
    a, b, c = cfg.exponents()
    rho2 = x * x + z * z
    lhs = x ** (2 * a) * z ** (2 * b) * rho2**c
    q = x / z
    rhs = z ** (2 * (a + b + c)) * q ** (2 * a) * (1 + q * q) ** c
    return lhs, rhs
