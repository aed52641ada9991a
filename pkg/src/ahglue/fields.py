"""Planar-symmetric field containers and their expansion to full index arrays.

Fields depend on ``(t, z)`` only.  A symmetric 2-tensor is stored by its four
independent coordinate components ``(tt, tz, zz, perp)``; the ``perp``
component fills the ``n - 2`` transverse diagonal slots.  Vectors carry
``(t, z)`` components only.  For calculus every field is expanded to a full
array with the index axes first and the node axis last, index ``0 = t``,
``1 = z`` and ``2 .. n-1`` the transverse directions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateMetricError


@dataclass(frozen=True)
class ChartSpec:
    """Half-plane chart with the working annulus ``r_in <= s <= r_out``."""

    n: int = 3
    r_in: float = 1.0
    r_out: float = 4.0

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError("dimension n must be at least 3")
        if not self.r_in < self.r_out:
            raise ConfigError("annulus radii must satisfy r_in < r_out")


def sym_full(comp, n):
    """Expand reduced components ``(4, ...)`` to a full ``(n, n, ...)`` array."""
    comp = np.asarray(comp)
    out = np.zeros((n, n) + comp.shape[1:], dtype=comp.dtype)
    out[0, 0] = comp[0]
    out[0, 1] = out[1, 0] = comp[1]
    out[1, 1] = comp[2]
    for k in range(2, n):
        out[k, k] = comp[3]
    return out


def sym_reduce(full):
    """Extract ``(tt, tz, zz, perp)`` from a full symmetric array."""
    full = np.asarray(full)
    return np.stack([full[0, 0], 0.5 * (full[0, 1] + full[1, 0]), full[1, 1], full[2, 2]])


def vec_full(comp, n):
    comp = np.asarray(comp)
    out = np.zeros((n,) + comp.shape[1:], dtype=comp.dtype)
    out[:2] = comp
    return out


@dataclass(frozen=True, eq=False)
class ReducedSymTensor:
    """Symmetric 2-tensor with components ``(tt, tz, zz, perp)`` at the nodes.

    ``comps`` has shape ``(4, N)``.  ``is_metric`` requests a positivity check.
    """

    comps: np.ndarray
    n: int
    is_metric: bool = False

    def __post_init__(self):
        c = np.asarray(self.comps, dtype=float)
        if c.ndim != 2 or c.shape[0] != 4:
            raise ConfigError("ReducedSymTensor needs components of shape (4, N)")
        object.__setattr__(self, "comps", c)
        if self.is_metric:
            check_positive(c)

    @property
    def tt(self):
        return self.comps[0]

    @property
    def tz(self):
        return self.comps[1]

    @property
    def zz(self):
        return self.comps[2]

    @property
    def perp(self):
        return self.comps[3]

    def full(self):
        return sym_full(self.comps, self.n)

    @classmethod
    def from_full(cls, full, n, is_metric=False):
        return cls(sym_reduce(full), n, is_metric)

    def __add__(self, other):
        return ReducedSymTensor(self.comps + other.comps, self.n)

    def __sub__(self, other):
        return ReducedSymTensor(self.comps - other.comps, self.n)

    def scale(self, f):
        return ReducedSymTensor(self.comps * f, self.n)


@dataclass(frozen=True, eq=False)
class ReducedVector:
    """Vector field ``(Y_t, Y_z)``; transverse components vanish.

    ``covariant`` records whether the stored components are ``Y_i`` (True)
    or ``Y^i`` (False).  ``transverse_rate`` is an optional constant ``k``
    adding the field ``k y^A d_A``: it vanishes on the slice ``y = 0`` where
    all fields are sampled, but its derivative ``k delta^A_B`` does not.  It
    is needed to represent the dilation ``t d_t + y d_y + z d_z``.
    """

    comps: np.ndarray
    n: int
    covariant: bool = False
    transverse_rate: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.comps, dtype=float)
        if c.ndim != 2 or c.shape[0] != 2:
            raise ConfigError("ReducedVector needs components of shape (2, N)")
        object.__setattr__(self, "comps", c)

    def full(self):
        return vec_full(self.comps, self.n)


def check_positive(comps):
    """Raise if the ``(tt, tz; tz, zz)`` block or ``perp`` is not positive definite."""
    tt, tz, zz, pp = comps
    det = tt * zz - tz**2
    bad = ~((tt > 0) & (det > 0) & (pp > 0))
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise DegenerateMetricError(f"metric not positive definite at node {k}")
