"""Gaussian random-field samplers: dense Cholesky, SPDE solves, spectral sums."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FactorizationError, NumericalError, SolverError

SPDE_RTOL = 1e-10


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the unit cube.

    Nodes sit at cell centres ``(i + 1/2) / n``; with ``periodic=True`` they
    sit at ``i / n`` instead, which is the natural layout for FFTs.
    Multi-dimensional points are ordered lexicographically with the first
    coordinate varying slowest.
    """

    d: int
    n: int
    periodic: bool = False

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("only d = 1 and d = 2 are supported")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @cached_property
    def coords(self) -> np.ndarray:
        offset = 0.0 if self.periodic else 0.5
        return (np.arange(self.n) + offset) / self.n

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(n**d, d)``."""
        axes = np.meshgrid(*([self.coords] * self.d), indexing="ij")
        return np.stack([a.reshape(-1) for a in axes], axis=1)


def neumann_laplacian(grid: Grid) -> sp.csr_matrix:
    """Negative Laplacian with zero normal derivative, as a sparse matrix.

    Second-order centred differences with mirrored ghost nodes, so the
    boundary rows read ``(u_0 - u_1) / h**2``.
    """
    n, h = grid.n, grid.spacing
    if n == 1:
        t = sp.csr_matrix((1, 1))
    else:
        main = np.full(n, 2.0)
        main[0] = main[-1] = 1.0
        off = -np.ones(n - 1)
        t = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    t = t / h ** 2
    if grid.d == 1:
        return t.tocsr()
    eye = sp.identity(n, format="csr")
    return (sp.kron(t, eye) + sp.kron(eye, t)).tocsr()


@lru_cache(maxsize=32)
def _neumann_bands(n: int):
    """Main and upper diagonals of the one-dimensional Neumann Laplacian."""
    lap = neumann_laplacian(Grid(1, n))
    main, off = lap.diagonal(), lap.diagonal(1)
    main.setflags(write=False)
    off.setflags(write=False)
    return main, off


# ---------------------------------------------------------------------------
# dense sampling


def _failing_pivot(a: np.ndarray, info: int):
    i = info - 1
    if i == 0:
        return float(a[0, 0]), 0
    lead = sla.cholesky(a[:i, :i], lower=True)
    row = sla.solve_triangular(lead, a[:i, i], lower=True)
    return float(a[i, i] - row @ row), i


def cholesky_with_jitter(a: np.ndarray):
    """Lower Cholesky factor, retrying once with a small diagonal jitter.

    The jitter is ``1e-12 * trace(a) / N``. A second failure raises
    :class:`FactorizationError` carrying the offending pivot.

    Returns
    -------
    L : ndarray
    jittered : bool
    """
    a = np.asarray(a, dtype=float)
    c, info = sla.lapack.dpotrf(a, lower=1, clean=1)
    if info == 0:
        return c, False
    if info < 0:
        raise ValueError("invalid matrix passed to dpotrf")
    n = a.shape[0]
    b = a + (1e-12 * np.trace(a) / n) * np.eye(n)
    c, info = sla.lapack.dpotrf(b, lower=1, clean=1)
    if info == 0:
        return c, True
    pivot, index = _failing_pivot(b, info)
    raise FactorizationError("Cholesky failed after jitter retry", pivot, index)


def sample_dense(R: np.ndarray, rng=None, noise=None) -> np.ndarray:
    """Draw from ``N(0, R)`` as ``L z`` with ``L`` the lower Cholesky factor.

    ``noise`` may replace the standard-normal vector ``z`` (shape ``(N,)`` or
    ``(N, k)`` for ``k`` draws).
    """
    L, _ = cholesky_with_jitter(R)
    if noise is None:
        noise = rng.standard_normal(L.shape[0])
    return L @ noise


# ---------------------------------------------------------------------------
# SPDE precision operators


class PrecisionOperator:
    """Rescaled SPDE operator ``A = sigma^-1 Gamma^(d/4 - alpha/2) (P + Gamma)^(alpha/2)``.

    The implied covariance is ``C = (A^T A)^-1`` and a sample solves
    ``A v = xi`` for discrete white noise ``xi``. Instances are treated as
    immutable; factorizations are built lazily and cached.

    Parameters
    ----------
    grid : Grid
    gamma_diag : ndarray
        Pointwise values of ``Gamma``, strictly positive.
    alpha : int
        Even positive integer.
    sigma : float
    laplacian : sparse matrix, optional
        Precomputed :func:`neumann_laplacian` of ``grid``, for reuse.
    """

    def __init__(self, grid: Grid, gamma_diag, alpha: int = 4, sigma: float = 1.0,
                 laplacian=None):
        gamma_diag = np.asarray(gamma_diag, dtype=float).reshape(-1)
        if int(alpha) != alpha or alpha <= 0 or alpha % 2:
            raise ValueError(f"alpha must be an even positive integer, got {alpha}")
        if gamma_diag.size != grid.size:
            raise ValueError("gamma_diag does not match the grid")
        if not np.all(gamma_diag > 0) or not np.all(np.isfinite(gamma_diag)):
            raise ValueError("Gamma must be finite and strictly positive")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.grid = grid
        self.gamma_diag = gamma_diag
        self.gamma_diag.setflags(write=False)
        self.alpha = int(alpha)
        self.sigma = float(sigma)
        self.laplacian = neumann_laplacian(grid) if laplacian is None else laplacian
        self.power = self.alpha // 2
        self.gamma_exponent = grid.d / 4.0 - self.alpha / 2.0

    @cached_property
    def shifted(self) -> sp.csr_matrix:
        """``P + Gamma``."""
        return (self.laplacian + sp.diags(self.gamma_diag)).tocsr()

    @cached_property
    def _gamma_scale(self) -> np.ndarray:
        return self.gamma_diag ** self.gamma_exponent

    @cached_property
    def _bands(self):
        main, off = _neumann_bands(self.grid.n)
        return main + self.gamma_diag, off

    @cached_property
    def _banded_factor(self):
        main, off = self._bands
        ab = np.zeros((2, main.size))
        ab[1] = main
        ab[0, 1:] = off
        c, info = sla.lapack.dpbtrf(ab, lower=0)
        if info != 0:
            raise FactorizationError("banded Cholesky of P + Gamma failed", float("nan"), info - 1)
        return c

    @cached_property
    def _lu(self):
        return spla.splu(self.shifted.tocsc())

    def _shifted_solve(self, b, iterative: bool):
        if self.grid.d == 1:
            x, info = sla.lapack.dpbtrs(self._banded_factor, b, lower=0)
            if info != 0:
                raise ValueError("invalid arguments to dpbtrs")
            return x
        if not iterative:
            return self._lu.solve(b)
        k = self.shifted
        inv_diag = 1.0 / k.diagonal()
        prec = spla.LinearOperator(k.shape, matvec=lambda x: inv_diag * x)
        x, info = spla.cg(k, b, rtol=1e-13, atol=0.0, maxiter=20 * k.shape[0], M=prec)
        if info != 0:
            res = np.linalg.norm(k @ x - b) / max(np.linalg.norm(b), 1e-300)
            raise SolverError("conjugate gradient did not converge", res)
        return x

    def inverse_power(self, b, iterative: bool = False):
        """Apply ``(P + Gamma)^(-alpha/2)`` to a vector or the columns of a matrix."""
        x = np.asarray(b, dtype=float)
        for _ in range(self.power):
            x = self._shifted_solve(x, iterative)
        return x

    def _shifted_matvec(self, x):
        if self.grid.d > 1:
            return self.shifted @ x
        main, off = self._bands
        if x.ndim > 1:
            main, off = main[:, None], off[:, None]
        y = main * x
        y[:-1] += off * x[1:]
        y[1:] += off * x[:-1]
        return y

    def _shifted_power(self, v):
        x = np.asarray(v, dtype=float)
        for _ in range(self.power):
            x = self._shifted_matvec(x)
        return x

    def apply(self, v):
        """``A v``."""
        x = self._shifted_power(v)
        scale = self._gamma_scale if x.ndim == 1 else self._gamma_scale[:, None]
        return scale * x / self.sigma

    def apply_transpose(self, v):
        """``A^T v``."""
        v = np.asarray(v, dtype=float)
        scale = self._gamma_scale if v.ndim == 1 else self._gamma_scale[:, None]
        return self._shifted_power(scale * v) / self.sigma

    def solve(self, b, rtol: float = SPDE_RTOL, refinements: int = 3):
        """Solve ``A v = b`` to relative residual ``rtol``.

        A few steps of iterative refinement are used if the first solve
        falls short; failure raises :class:`SolverError`.
        """
        b = np.asarray(b, dtype=float)
        iterative = self.grid.d > 1
        scale = self.sigma / self._gamma_scale
        if b.ndim > 1:
            scale = scale[:, None]
        v = self.inverse_power(scale * b, iterative)
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return v
        for attempt in range(refinements + 1):
            r = b - self.apply(v)
            res = np.linalg.norm(r) / bnorm
            if res <= rtol:
                return v
            if attempt < refinements:
                v = v + self.inverse_power(scale * r, iterative)
        raise SolverError("SPDE solve missed the residual target", res)

    def to_dense(self) -> np.ndarray:
        """Dense matrix of ``A``; intended for small grids and tests."""
        return self.apply(np.eye(self.grid.size))

    def covariance_dense(self) -> np.ndarray:
        """Dense covariance of the discrete field, ``(A^T A)^-1 / cell_volume``."""
        a = self.to_dense()
        return np.linalg.inv(a.T @ a) / self.grid.cell_volume


def assemble_precision(grid: Grid, u, F, alpha: int = 4, sigma: float = 1.0,
                       laplacian=None) -> PrecisionOperator:
    """Precision operator of the layer conditioned on ``u``, with ``Gamma = F(u)``."""
    if int(alpha) != alpha or alpha <= 0 or alpha % 2:
        raise ValueError(f"alpha must be an even positive integer, got {alpha}")
    gamma = F(np.asarray(u, dtype=float).reshape(-1))
    if not np.all(np.isfinite(gamma)) or np.any(gamma <= 0):
        raise NumericalError("F(u) is not finite and strictly positive everywhere")
    return PrecisionOperator(grid, gamma, alpha, sigma, laplacian)


def constant_precision(grid: Grid, gamma: float, alpha: int = 4, sigma: float = 1.0,
                       laplacian=None) -> PrecisionOperator:
    """Stationary operator with ``Gamma`` identically equal to ``gamma``."""
    return PrecisionOperator(grid, np.full(grid.size, float(gamma)), alpha, sigma, laplacian)


def sample_spde(op: PrecisionOperator, rng=None, noise=None) -> np.ndarray:
    """Draw ``v ~ N(0, C)`` by solving ``A v = xi``.

    ``xi`` has i.i.d. ``N(0, 1 / cell_volume)`` components; ``noise`` may
    supply the underlying standard-normal vector.
    """
    if noise is None:
        noise = rng.standard_normal(op.grid.size)
    xi = np.asarray(noise, dtype=float) / np.sqrt(op.grid.cell_volume)
    return op.solve(xi)


def calibrate_sigma(grid: Grid, alpha: int, pilot: int, rng, base_gamma: float = 20.0) -> float:
    """Amplitude giving unit mean-square for a stationary baseline layer.

    Pilot draws come from the operator with ``Gamma`` identically
    ``base_gamma**2`` and ``sigma = 1``; the result is ``1 / sqrt(m2)`` with
    ``m2`` their mean spatial average of ``u**2``.
    """
    if pilot < 100:
        raise ValueError("pilot must be at least 100")
    op = constant_precision(grid, base_gamma ** 2, alpha, 1.0)
    z = rng.standard_normal((grid.size, pilot))
    scale = (1.0 / op._gamma_scale)[:, None] / np.sqrt(grid.cell_volume)
    v = op.inverse_power(scale * z)
    return float(1.0 / np.sqrt(np.mean(np.square(v))))


# ---------------------------------------------------------------------------
# spectral expansions

BASES = ("fourier", "sine", "cosine")


@dataclass(frozen=True, eq=False)
class SpectralCovariance:
    """Covariance diagonal in a fixed basis.

    Attributes
    ----------
    basis : {"fourier", "sine", "cosine"}
        ``fourier`` uses ``exp(2 pi i k.x)`` on the periodic unit cube;
        ``sine`` uses ``sqrt(2) sin(j pi x)`` and ``cosine`` uses
        ``sqrt(2) cos(j pi x)``, both for ``j = 1..K`` in one dimension.
    eigenvalues : ndarray
        ``lambda_k**2``. For ``fourier`` the array has shape ``(2K+1,)*d``
        indexed by ``k + K``; otherwise shape ``(K,)`` indexed by ``j - 1``.
    """

    basis: str
    eigenvalues: np.ndarray

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}")
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.size == 0 or np.any(ev < 0) or not np.all(np.isfinite(ev)):
            raise ValueError("eigenvalues must be finite and non-negative")
        if self.basis == "fourier":
            if any(s % 2 == 0 or s != ev.shape[0] for s in ev.shape) or ev.ndim > 2:
                raise ValueError("fourier eigenvalues need shape (2K+1,)*d")
        elif ev.ndim != 1:
            raise ValueError("sine/cosine eigenvalues must be one-dimensional")
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def truncation(self) -> int:
        if self.basis == "fourier":
            return (self.eigenvalues.shape[0] - 1) // 2
        return self.eigenvalues.shape[0]

    @property
    def d(self) -> int:
        return self.eigenvalues.ndim if self.basis == "fourier" else 1

    @property
    def n_noise(self) -> int:
        """Number of scalar standard normals consumed by one draw."""
        return self.eigenvalues.size

    @classmethod
    def brownian_bridge(cls, K: int):
        j = np.arange(1, K + 1)
        return cls("sine", 1.0 / (np.pi ** 2 * j ** 2))

    @classmethod
    def neumann(cls, K: int):
        """Mean-zero Brownian-motion-type field in the cosine basis."""
        j = np.arange(1, K + 1)
        return cls("cosine", 1.0 / (np.pi ** 2 * j ** 2))

    @classmethod
    def flat(cls, K: int, lam2: float, d: int = 1):
        """Periodic field with ``lambda_k**2 = lam2`` for every ``|k_i| <= K``."""
        return cls("fourier", np.full((2 * K + 1,) * d, float(lam2)))

    @classmethod
    def matern(cls, K: int, alpha: float, tau: float = 1.0, scale: float = 1.0, d: int = 1):
        """``lambda_k**2 = scale * (tau**2 + 4 pi**2 |k|**2)**-alpha`` on the torus."""
        k = np.arange(-K, K + 1)
        grids = np.meshgrid(*([k] * d), indexing="ij")
        k2 = sum(g.astype(float) ** 2 for g in grids)
        return cls("fourier", scale * (tau ** 2 + 4 * np.pi ** 2 * k2) ** (-alpha))

    def fourier_multipliers(self) -> np.ndarray:
        """Effective periodic Fourier multipliers per unit noise.

        For the sine and cosine bases the periodic reading
        ``sqrt(2) sin(2 pi j x)`` / ``sqrt(2) cos(2 pi j x)`` is used, so the
        coefficient at ``k`` is ``sgn(k) alpha_|k| / (sqrt(2) i)`` or
        ``alpha_|k| / sqrt(2)`` times a noise variable shared by ``+-k``;
        ``|lambda_k|**2 = alpha_|k|**2 / 2``. Returned for ``k = -K..K``.
        """
        if self.basis == "fourier":
            return np.sqrt(self.eigenvalues).astype(complex)
        K = self.truncation
        k = np.arange(-K, K + 1)
        a = np.zeros(2 * K + 1)
        a[k != 0] = np.sqrt(self.eigenvalues[np.abs(k[k != 0]) - 1])
        if self.basis == "sine":
            return np.sign(k) * a / (np.sqrt(2.0) * 1j)
        return a / np.sqrt(2.0) + 0j


@dataclass
class SpectralSample:
    coefficients: np.ndarray
    points: np.ndarray
    field: np.ndarray


def spectral_basis(cov: SpectralCovariance, points) -> np.ndarray:
    """Basis functions evaluated at ``points``; shape ``(M, n_modes)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    K = cov.truncation
    if cov.basis == "fourier":
        k = np.arange(-K, K + 1)
        grids = np.meshgrid(*([k] * cov.d), indexing="ij")
        wave = np.stack([g.reshape(-1) for g in grids], axis=1)
        return np.exp(2j * np.pi * pts @ wave.T)
    j = np.arange(1, K + 1)
    arg = np.pi * pts[:, :1] * j[None, :]
    return np.sqrt(2.0) * (np.sin(arg) if cov.basis == "sine" else np.cos(arg))


def sample_spectral(cov: SpectralCovariance, rng=None, points=None, noise=None) -> SpectralSample:
    """Truncated Karhunen-Loeve draw ``sum_k lambda_k eta_k phi_k``.

    Parameters
    ----------
    cov : SpectralCovariance
    rng : numpy.random.Generator, optional
    points : array_like, optional
        Evaluation points; defaults to 101 equispaced points on ``[0, 1]``
        (one dimension) or the 33**2 periodic grid (two dimensions).
    noise : array_like, optional
        Standard normals ``eta`` in the eigenvalue layout.

    Returns
    -------
    SpectralSample
        Coefficients ``lambda_k eta_k`` (flattened) and the synthesized field,
        complex for the Fourier basis and real otherwise.
    """
    if points is None:
        points = np.linspace(0.0, 1.0, 101) if cov.d == 1 else Grid(2, 33, periodic=True).points
    if noise is None:
        noise = rng.standard_normal(cov.eigenvalues.shape)
    coeffs = (np.sqrt(cov.eigenvalues) * np.asarray(noise, dtype=float).reshape(cov.eigenvalues.shape)).reshape(-1)
    field = spectral_basis(cov, points) @ coeffs
    return SpectralSample(coeffs, np.asarray(points, dtype=float), field)
