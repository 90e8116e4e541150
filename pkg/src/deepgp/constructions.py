"""Deep-GP Markov chains ``u_{n+1} = L(u_n) xi_{n+1}`` under four constructions.

Every step is a deterministic function of the current layer and a block of
standard-normal noise. Steps accept either a generator or the noise block
itself, so recorded noise replays a trajectory exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla

from .fields import (Grid, SpectralCovariance, assemble_precision,
                     cholesky_with_jitter, constant_precision, sample_spde,
                     sample_spectral)
from .kernels import (GaussianCorrelation, IsotropicKernel, LengthScaleMap,
                      SquaredExponential, Square, build_correlation_matrix)


@dataclass(frozen=True)
class Composition:
    """``u_{n+1}(x) = xi(u_n(x))`` with ``m`` i.i.d. GP components ``xi``."""

    kernel: SquaredExponential = SquaredExponential()
    width: int = 1
    connect_input: bool = False

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("width must be at least 1")


@dataclass(frozen=True)
class CovFunction:
    """Layer drawn from the nonstationary correlation ``R(u_n)``."""

    F: LengthScaleMap = Square()
    base: IsotropicKernel = GaussianCorrelation()


@dataclass(frozen=True)
class CovOperator:
    """Layer drawn from the SPDE operator with ``Gamma = F(u_n)``."""

    F: LengthScaleMap
    alpha: int = 4
    sigma: float = 1.0
    base_gamma: float = 20.0


@dataclass(frozen=True)
class Convolution:
    """``u_{n+1} = u_n * xi_{n+1}`` on the periodic unit cube."""

    cov: SpectralCovariance


Variant = Union[Composition, CovFunction, CovOperator, Convolution]


@dataclass(frozen=True)
class DeepChainConfig:
    variant: Variant
    grid: Grid
    depth: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if isinstance(self.variant, Convolution):
            if not self.grid.periodic:
                raise ValueError("the convolution construction needs a periodic grid")
            K = self.variant.cov.truncation
            if 2 * K + 1 > self.grid.n:
                raise ValueError(f"truncation K={K} does not fit on {self.grid.n} nodes")
            if self.variant.cov.d != self.grid.d:
                raise ValueError("spectral covariance and grid dimensions differ")


def noise_shape(cfg: DeepChainConfig) -> tuple:
    """Shape of the standard-normal block consumed by one step."""
    v = cfg.variant
    if isinstance(v, Composition):
        return (cfg.grid.size, v.width)
    if isinstance(v, Convolution):
        return (v.cov.n_noise,)
    return (cfg.grid.size,)


def _noise(cfg, rng, noise):
    if noise is None:
        return rng.standard_normal(noise_shape(cfg))
    noise = np.asarray(noise, dtype=float)
    if noise.shape != noise_shape(cfg):
        raise ValueError(f"noise has shape {noise.shape}, expected {noise_shape(cfg)}")
    return noise


# ---------------------------------------------------------------------------
# composition


def _pivoted_factor(S: np.ndarray) -> np.ndarray:
    """Rank-revealing factor ``B`` with ``S = B B^T`` (pivoted Cholesky)."""
    if S.shape[0] == 0:
        return np.zeros((0, 0))
    c, piv, rank, info = sla.lapack.dpstrf(S, lower=1)
    if info < 0:
        raise ValueError("invalid matrix passed to dpstrf")
    B = np.zeros((S.shape[0], rank))
    B[piv - 1] = np.tril(c)[:, :rank]
    return B


def sample_se_field(z: np.ndarray, kernel: SquaredExponential, noise: np.ndarray) -> np.ndarray:
    """Evaluate ``m`` i.i.d. squared-exponential GPs at the locations ``z``.

    Repeated locations receive identical values. The remaining ones are
    sampled conditionally on a reference location, whose conditional
    covariance ``v e^{-c(|d_i|^2 + |d_j|^2)} expm1(2c <d_i, d_j>)`` is
    accurate even when locations nearly coincide and the plain kernel
    matrix is numerically singular. Its factor is shared by all components.

    Parameters
    ----------
    z : ndarray, shape (N, p)
    kernel : SquaredExponential
    noise : ndarray, shape (N, m)
        Row 0 drives the reference value; rows ``1..rank`` drive the rest.
    """
    z = np.asarray(z, dtype=float)
    uniq, inverse = np.unique(z, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    var, c = kernel.variance, kernel.rate
    ref = np.sqrt(var) * noise[0]
    delta = uniq[1:] - uniq[0]
    sq = np.einsum("ij,ij->i", delta, delta)
    gram = 2.0 * c * (delta @ delta.T)
    tot = -c * (sq[:, None] + sq[None, :])
    small = np.abs(gram) < 1.0
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        S = np.where(small, np.exp(tot) * np.expm1(np.where(small, gram, 0.0)),
                     np.exp(tot + np.where(small, 0.0, gram)) - np.exp(tot))
    S = var * 0.5 * (S + S.T)
    B = _pivoted_factor(S)
    rest = np.exp(-c * sq)[:, None] * ref[None, :] + B @ noise[1:1 + B.shape[1]]
    vals = np.vstack([ref[None, :], rest])
    return vals[inverse]


def step_composition(u, cfg: DeepChainConfig, rng=None, noise=None) -> np.ndarray:
    """One composition step; ``u`` has shape ``(N,)`` or ``(N, m)``."""
    v = cfg.variant
    u = np.asarray(u, dtype=float)
    u2 = u.reshape(u.shape[0], -1)
    if not np.all(np.isfinite(u2)):
        raise ValueError("u must be finite")
    z = np.hstack([u2, cfg.grid.points]) if v.connect_input else u2
    return sample_se_field(z, v.kernel, _noise(cfg, rng, noise))


# ---------------------------------------------------------------------------
# covariance function / covariance operator


def step_covfun(u, cfg: DeepChainConfig, rng=None, noise=None) -> np.ndarray:
    v = cfg.variant
    R = build_correlation_matrix(cfg.grid.points, u, v.F, v.base)
    L, _ = cholesky_with_jitter(R)
    return L @ _noise(cfg, rng, noise)


def step_covop(u, cfg: DeepChainConfig, rng=None, noise=None) -> np.ndarray:
    v = cfg.variant
    op = assemble_precision(cfg.grid, u, v.F, v.alpha, v.sigma)
    return sample_spde(op, noise=_noise(cfg, rng, noise))


def stationary_correlation(points, base: IsotropicKernel) -> np.ndarray:
    """``R_S``: the base kernel at unit length scale."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    diff = pts[:, None, :] - pts[None, :, :]
    return base(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))


# ---------------------------------------------------------------------------
# convolution


def noise_spectrum(cov: SpectralCovariance, grid: Grid, noise) -> np.ndarray:
    """Fourier coefficients of one noise field, laid out as ``numpy.fft`` output."""
    K, n = cov.truncation, grid.n
    mult = cov.fourier_multipliers()
    noise = np.asarray(noise, dtype=float)
    if cov.basis == "fourier":
        coef = mult * noise.reshape(mult.shape)
    else:
        k = np.arange(-K, K + 1)
        shared = np.concatenate([[0.0], noise.reshape(-1)])
        coef = mult * shared[np.abs(k)]
    out = np.zeros(grid.shape, dtype=complex)
    idx = np.arange(-K, K + 1) % n
    out[np.ix_(*([idx] * grid.d))] = coef
    return out


def fourier_coefficients(u, grid: Grid) -> np.ndarray:
    """``u_hat(k)`` with ``u(x_j) = sum_k u_hat(k) exp(2 pi i k x_j)``."""
    return np.fft.fftn(np.asarray(u).reshape(grid.shape)) / grid.size


def periodic_convolution(u, v, grid: Grid) -> np.ndarray:
    """Periodic convolution by FFT, scaled as a rectangle-rule integral."""
    fu = np.fft.fftn(np.asarray(u).reshape(grid.shape))
    fv = np.fft.fftn(np.asarray(v).reshape(grid.shape))
    return (np.fft.ifftn(fu * fv) * grid.cell_volume).reshape(-1)


def step_convolution(u, cfg: DeepChainConfig, rng=None, noise=None):
    """One convolution step computed mode by mode.

    Returns
    -------
    u_next : ndarray, complex, shape (N,)
    coeffs : ndarray, complex
        Fourier coefficients of ``u_next`` in ``numpy.fft`` layout.
    """
    grid = cfg.grid
    xi_hat = noise_spectrum(cfg.variant.cov, grid, _noise(cfg, rng, noise))
    coeffs = fourier_coefficients(u, grid) * xi_hat
    return (np.fft.ifftn(coeffs) * grid.size).reshape(-1), coeffs


# ---------------------------------------------------------------------------
# chains


def initial_layer(cfg: DeepChainConfig, rng=None, noise=None) -> np.ndarray:
    """Default first layer for each construction.

    Composition: GP with kernel ``h`` on the input coordinates.
    Covariance function: ``N(0, R_S)``. Covariance operator: the stationary
    operator with ``Gamma`` identically ``base_gamma**2``. Convolution: one
    draw of the spectral noise field.
    """
    v, grid = cfg.variant, cfg.grid
    if isinstance(v, Composition):
        return sample_se_field(grid.points, v.kernel, _noise(cfg, rng, noise))
    if isinstance(v, CovFunction):
        L, _ = cholesky_with_jitter(stationary_correlation(grid.points, v.base))
        return L @ _noise(cfg, rng, noise)
    if isinstance(v, CovOperator):
        op = constant_precision(grid, v.base_gamma ** 2, v.alpha, v.sigma)
        return sample_spde(op, noise=_noise(cfg, rng, noise))
    return sample_spectral(v.cov, points=grid.points, noise=_noise(cfg, rng, noise)).field


def step(u, cfg: DeepChainConfig, rng=None, noise=None):
    """Dispatch one step; always returns the new layer only."""
    v = cfg.variant
    if isinstance(v, Composition):
        return step_composition(u, cfg, rng, noise)
    if isinstance(v, CovFunction):
        return step_covfun(u, cfg, rng, noise)
    if isinstance(v, CovOperator):
        return step_covop(u, cfg, rng, noise)
    return step_convolution(u, cfg, rng, noise)[0]


def discrete_norm(u, grid: Grid) -> float:
    """Discrete ``L^2`` norm ``sqrt(cell_volume * sum |u|^2)``."""
    u = np.asarray(u)
    return float(np.sqrt(grid.cell_volume * np.sum(np.abs(u) ** 2)))


def max_spread(u) -> float:
    """Largest distance between the values at two nodes."""
    u = np.asarray(u)
    if u.ndim == 1 and not np.iscomplexobj(u):
        return float(u.max() - u.min())
    u2 = u.reshape(u.shape[0], -1)
    diff = u2[:, None, :] - u2[None, :, :]
    return float(np.sqrt(np.max(np.sum(np.abs(diff) ** 2, axis=-1))))


@dataclass
class ChainTrajectory:
    """Layers ``u_0..u_depth`` with per-layer summaries.

    ``coefficients`` holds Fourier coefficients (convolution only) and
    ``noise`` the consumed noise blocks when recording was requested.
    """

    layers: list
    norms: np.ndarray
    spreads: np.ndarray
    coefficients: Optional[list] = None
    noise: Optional[list] = None
    meta: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    def stacked(self) -> np.ndarray:
        return np.stack(self.layers)

    def to_npz(self, path) -> None:
        """Columnar binary format: one array per quantity."""
        arrays = {"layers": self.stacked(), "norms": self.norms, "spreads": self.spreads}
        if self.coefficients is not None:
            arrays["coefficients"] = np.stack(self.coefficients)
        if self.noise is not None:
            arrays["noise"] = np.stack(self.noise)
        np.savez(path, **arrays)

    @classmethod
    def from_npz(cls, path) -> "ChainTrajectory":
        with np.load(path) as f:
            coeffs = list(f["coefficients"]) if "coefficients" in f else None
            noise = list(f["noise"]) if "noise" in f else None
            return cls(list(f["layers"]), f["norms"], f["spreads"], coeffs, noise)

    def to_csv(self, path, header: str = "") -> None:
        """Long-format CSV with columns layer, node and value(s)."""
        first = np.asarray(self.layers[0])
        width = 1 if first.ndim == 1 else first.shape[1]
        cplx = any(np.iscomplexobj(u) for u in self.layers)
        names = ["value"] if width == 1 else [f"value_{j}" for j in range(width)]
        if cplx:
            names = [f"{n}_{part}" for n in names for part in ("re", "im")]
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["layer", "node"] + names)
            for n, u in enumerate(self.layers):
                u2 = np.asarray(u).reshape(len(u), -1)
                for i, row in enumerate(u2):
                    vals = []
                    for x in row:
                        vals.extend([repr(float(x.real)), repr(float(x.imag))] if cplx else [repr(float(x))])
                    w.writerow([n, i] + vals)


def run_chain(cfg: DeepChainConfig, u0=None, rng=None, record_noise: bool = False,
              depth: Optional[int] = None, noise: Optional[list] = None) -> ChainTrajectory:
    """Iterate the configured step ``depth`` times starting from ``u0``.

    Parameters
    ----------
    cfg : DeepChainConfig
    u0 : array_like, optional
        Initial layer; drawn with :func:`initial_layer` when omitted.
    rng : numpy.random.Generator, optional
        Defaults to ``default_rng(cfg.seed)``.
    record_noise : bool
        Keep the noise blocks so the run can be replayed.
    depth : int, optional
        Overrides ``cfg.depth``.
    noise : list of ndarray, optional
        Noise blocks to replay instead of drawing fresh ones.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    depth = cfg.depth if depth is None else depth
    if u0 is None:
        u0 = initial_layer(cfg, rng)
    u = np.array(u0, copy=True)
    conv = isinstance(cfg.variant, Convolution)
    layers = [u]
    coeffs = [fourier_coefficients(u, cfg.grid)] if conv else None
    used = [] if record_noise else None
    for n in range(depth):
        z = _noise(cfg, rng, None if noise is None else noise[n])
        if used is not None:
            used.append(z)
        if conv:
            u, c = step_convolution(u, cfg, noise=z)
            coeffs.append(c)
        else:
            u = step(u, cfg, noise=z)
        layers.append(u)
    norms = np.array([discrete_norm(x, cfg.grid) for x in layers])
    spreads = np.array([max_spread(x) for x in layers])
    return ChainTrajectory(layers, norms, spreads, coeffs, used)
