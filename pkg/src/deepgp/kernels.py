"""Stationary and nonstationary correlation kernels.

The nonstationary kernel is of Paciorek type with a scalar length-scale
field ``Sigma(x) = G(x) I_d`` where ``G = F(u(x))`` is obtained by pushing a
layer ``u`` through a length-scale map ``F``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class SquaredExponential:
    """``h(r) = sigma2 * exp(-r**2 / (2 * w2))``."""

    sigma2: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.w2 > 0):
            raise ValueError("sigma2 and w2 must be positive")

    @property
    def variance(self) -> float:
        return float(self.sigma2)

    @property
    def rate(self) -> float:
        """Coefficient ``c`` in ``h(r) = variance * exp(-c r**2)``."""
        return 0.5 / self.w2

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.sigma2 * np.exp(-np.square(r) / (2.0 * self.w2))


@dataclass(frozen=True)
class GaussianCorrelation:
    """Unit-amplitude Gaussian correlation ``rho_S(r) = exp(-r**2)``."""

    @property
    def variance(self) -> float:
        return 1.0

    @property
    def rate(self) -> float:
        return 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.exp(-np.square(r))


IsotropicKernel = Union[SquaredExponential, GaussianCorrelation]


def eval_isotropic(kernel: IsotropicKernel, r):
    """Evaluate an isotropic kernel at distance(s) ``r >= 0``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise ValueError("distances must be non-negative")
    out = kernel(r)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# length-scale maps


@dataclass(frozen=True)
class Square:
    """``F(x) = x**2``."""

    def __call__(self, u):
        return np.square(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class Exp:
    """``F(x) = exp(x)``.

    Badly conditioned in practice: large positive ``u`` gives near-singular
    correlation matrices and large negative ``u`` gives near-identity ones.
    """

    def __call__(self, u):
        with np.errstate(over="ignore"):
            return np.exp(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class ClampedExp:
    """``F(x) = min(f_minus + a * exp(b * x**2), f_plus)``."""

    f_minus: float
    a: float
    b: float
    f_plus: float

    def __post_init__(self):
        if min(self.f_minus, self.a, self.b, self.f_plus) <= 0:
            raise ValueError("ClampedExp parameters must be positive")
        if self.f_plus < self.f_minus:
            raise ValueError("f_plus must not be below f_minus")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore"):
            val = self.f_minus + self.a * np.exp(self.b * np.square(u))
        return np.minimum(val, self.f_plus)


LengthScaleMap = Union[Square, Exp, ClampedExp]


# ---------------------------------------------------------------------------
# Paciorek correlation


def paciorek_correlation(x, xp, gx: float, gxp: float,
                         base: IsotropicKernel = GaussianCorrelation(),
                         guarded: bool = True) -> float:
    """Nonstationary correlation between two points.

    Parameters
    ----------
    x, xp : array_like
        Points in ``R^d``.
    gx, gxp : float
        Scalar length scales ``G(x)``, ``G(xp)``, both non-negative.
    base : IsotropicKernel
        Correlation kernel with value 1 at the origin.
    guarded : bool
        If True, degenerate length scales return the limiting values
        (1 on the diagonal, 0 off it). If False, ``gx = gxp = 0`` raises.

    Returns
    -------
    float
        ``(4 gx gxp / (gx + gxp)**2)**(d/4) * base(sqrt(Q))`` with
        ``Q = 2 |x - xp|**2 / (gx + gxp)``.

    Notes
    -----
    With ``gx = gxp = 0`` and ``x != xp`` the limit is 0 while the value at
    ``x == xp`` is 1, so the kernel is discontinuous in the length scales at
    the origin.
    """
    if base.variance != 1.0:
        raise ValueError("base kernel must be a correlation kernel")
    if gx < 0 or gxp < 0:
        raise ValueError("length scales must be non-negative")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    d = x.size
    s = gx + gxp
    if s == 0 and not guarded:
        raise ZeroDivisionError("gx = gxp = 0 on the unguarded path")
    dist2 = float(np.sum(np.square(x - xp)))
    if guarded:
        if dist2 == 0.0:
            return 1.0
        if gx == 0 or gxp == 0:
            return 0.0
    # (4 gx gxp / s^2)^(d/4) written so that tiny scales do not underflow
    pre = min((2.0 * np.sqrt(gx) * np.sqrt(gxp) / s) ** (d / 2.0), 1.0)
    q = 2.0 * dist2 / s
    return float(pre * base(np.sqrt(q)))


def _squared_distances(points: np.ndarray) -> np.ndarray:
    # exact differences rather than the |a|^2 + |b|^2 - 2ab expansion
    diff = points[:, None, :] - points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def build_correlation_matrix(points, u, F: LengthScaleMap,
                             base: IsotropicKernel = GaussianCorrelation()
                             ) -> np.ndarray:
    """Correlation matrix ``R(u)`` of the nonstationary kernel on a point set.

    Parameters
    ----------
    points : array_like, shape (N, d) or (N,)
        Pairwise distinct points.
    u : array_like, shape (N,)
        Layer values at the points.
    F : LengthScaleMap
    base : IsotropicKernel

    Returns
    -------
    ndarray, shape (N, N)
        Symmetric with diagonal exactly 1, so the trace is exactly N.
    """
    if base.variance != 1.0:
        raise ValueError("base kernel must be a correlation kernel")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    u = np.asarray(u, dtype=float).reshape(-1)
    n, d = pts.shape
    if u.size != n:
        raise ValueError(f"u has length {u.size}, expected {n}")
    if np.unique(pts, axis=0).shape[0] != n:
        raise ValueError("points must be pairwise distinct")
    g = F(u)
    dist2 = _squared_distances(pts)
    s = g[:, None] + g[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        rg = np.sqrt(g)
        pre = np.minimum((2.0 * np.outer(rg, rg) / s) ** (d / 2.0), 1.0)
        q = 2.0 * dist2 / s
        vals = pre * base(np.sqrt(q))
    vals[(g[:, None] == 0) | (g[None, :] == 0)] = 0.0
    # enforce exact symmetry and the unit diagonal
    vals = np.triu(vals, 1)
    vals = vals + vals.T
    np.fill_diagonal(vals, 1.0)
    return vals
