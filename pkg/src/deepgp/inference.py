"""Bayesian inversion with deep-GP priors in non-centred coordinates.

The hierarchy is written as ``u = T(xi)`` with i.i.d. standard-normal
``xi``: ``u_0 = L_0 xi_0`` and ``u_{n+1} = L(u_n) xi_{n+1}``, where
``L(u)`` is the Cholesky factor of ``R(u)`` (covariance-function
construction) or the solution map of ``A(u) v = xi / sqrt(cell_volume)``
(covariance-operator construction). A pCN sampler acts on ``xi``.

For linear observations the top layer is Gaussian given the layer below
it, so it is integrated out. The sampler then targets the hyper-layers
under the marginal potential ``Psi``, and top-layer draws come from
Gaussian-process regression.
"""
from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.stats import norm as _normal

from .constructions import CovFunction, CovOperator, stationary_correlation
from .errors import FactorizationError, NumericalError
from .fields import (Grid, PrecisionOperator, assemble_precision,
                     cholesky_with_jitter, constant_precision,
                     neumann_laplacian)
from .kernels import build_correlation_matrix

# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    """Point observations ``y = u(x_j) + noise``.

    ``noise_cov`` optionally replaces ``noise_std**2 * I`` by a general
    positive-definite matrix.
    """

    obs_points: np.ndarray
    y: np.ndarray
    noise_std: float
    noise_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        self.obs_points = np.asarray(self.obs_points, dtype=float)
        if self.obs_points.ndim == 1:
            self.obs_points = self.obs_points[:, None]
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.y.size < 1 or self.y.size != self.obs_points.shape[0]:
            raise ValueError("need J >= 1 observations matching obs_points")
        if np.any(self.obs_points < 0) or np.any(self.obs_points > 1):
            raise ValueError("observation points must lie in the unit cube")
        if self.noise_cov is None and not self.noise_std > 0:
            raise ValueError("noise_std must be positive")

    @property
    def J(self) -> int:
        return self.y.size

    def noise_covariance(self) -> np.ndarray:
        if self.noise_cov is not None:
            return np.asarray(self.noise_cov, dtype=float)
        return self.noise_std ** 2 * np.eye(self.J)

    @cached_property
    def _noise_chol(self):
        return sla.cholesky(self.noise_covariance(), lower=True)

    def sample_noise(self, rng) -> np.ndarray:
        z = rng.standard_normal(self.J)
        if self.noise_cov is None:
            return self.noise_std * z
        return self._noise_chol @ z


def _axis_weights(x: np.ndarray, grid: Grid, method: str):
    n = grid.n
    if method == "nearest":
        # cell containing x; ties on cell faces go to the upper cell
        idx = np.clip(np.floor(x * n + 1e-9).astype(int), 0, n - 1)
        return idx[:, None], np.ones((x.size, 1))
    t = np.clip(x * n - 0.5, 0.0, n - 1.0)
    lo = np.minimum(np.floor(t).astype(int), max(n - 2, 0))
    w = t - lo
    hi = np.minimum(lo + 1, n - 1)
    return np.stack([lo, hi], axis=1), np.stack([1 - w, w], axis=1)


def observation_operator(grid: Grid, points, method: str = "nearest") -> sp.csr_matrix:
    """Sparse ``J x N`` matrix evaluating grid functions at ``points``.

    ``nearest`` picks the node of the cell containing each point; ``linear``
    interpolates between cell centres (bilinearly in two dimensions) and is
    constant beyond the outermost centres.
    """
    if grid.periodic:
        raise ValueError("observation operators are defined on cell-centred grids")
    if method not in ("nearest", "linear"):
        raise ValueError(f"unknown observation method {method!r}")
    pts = np.asarray(points, dtype=float).reshape(-1, grid.d)
    J = pts.shape[0]
    per_axis = [_axis_weights(pts[:, k], grid, method) for k in range(grid.d)]
    if grid.d == 1:
        idx, w = per_axis[0]
    else:
        (i0, w0), (i1, w1) = per_axis
        idx = (i0[:, :, None] * grid.n + i1[:, None, :]).reshape(J, -1)
        w = (w0[:, :, None] * w1[:, None, :]).reshape(J, -1)
    rows = np.repeat(np.arange(J), idx.shape[1])
    A = sp.csr_matrix((w.reshape(-1), (rows, idx.reshape(-1))), shape=(J, grid.size))
    A.sum_duplicates()
    return A


# ---------------------------------------------------------------------------
# top-layer covariances


class DenseTopLayer:
    """Top layer with an explicit covariance matrix."""

    def __init__(self, C: np.ndarray):
        self.C = C

    @cached_property
    def factor(self):
        return cholesky_with_jitter(self.C)[0]

    def obs_cov(self, At: np.ndarray) -> np.ndarray:
        return At.T @ (self.C @ At)

    def cross_cov(self, At: np.ndarray) -> np.ndarray:
        return self.C @ At

    def sample(self, rng) -> np.ndarray:
        return self.factor @ rng.standard_normal(self.C.shape[0])

    def dense(self) -> np.ndarray:
        return self.C


class OperatorTopLayer:
    """Top layer with covariance ``(A^T A)^-1 / cell_volume`` of an SPDE operator.

    With ``K = P + Gamma`` and ``s = sigma**2 / cell_volume`` the covariance
    is ``s K^-p D K^-p`` for ``D = Gamma^(alpha - d/2)`` and ``p = alpha/2``,
    so products with ``A_obs^T`` cost ``p`` sparse solves per observation.
    """

    def __init__(self, op: PrecisionOperator):
        self.op = op
        self._scale = op.sigma ** 2 / op.grid.cell_volume
        self._diag = op._gamma_scale ** -2.0
        self._w_cache = {}

    def _w(self, At):
        key = id(At)
        if key not in self._w_cache:
            self._w_cache = {key: self.op.inverse_power(At)}
        return self._w_cache[key]

    def obs_cov(self, At: np.ndarray) -> np.ndarray:
        W = self._w(At)
        return self._scale * (W.T @ (self._diag[:, None] * W))

    def cross_cov(self, At: np.ndarray) -> np.ndarray:
        W = self._w(At)
        return self._scale * self.op.inverse_power(self._diag[:, None] * W)

    def sample(self, rng) -> np.ndarray:
        xi = rng.standard_normal(self.op.grid.size) / np.sqrt(self.op.grid.cell_volume)
        return self.op.solve(xi)

    def dense(self) -> np.ndarray:
        n = self.op.grid.size
        B = self.op.inverse_power(np.eye(n))
        return self._scale * (B @ (self._diag[:, None] * B))


# ---------------------------------------------------------------------------
# prior hierarchy


class DeepPrior:
    """Whitened deep-GP hierarchy on a grid.

    Parameters
    ----------
    variant : CovFunction or CovOperator
    grid : Grid
    n_layers : int
        Number of layers represented in ``xi``.
    """

    def __init__(self, variant, grid: Grid, n_layers: int):
        if not isinstance(variant, (CovFunction, CovOperator)):
            raise TypeError("inference supports the covariance-function and operator constructions")
        if n_layers < 0:
            raise ValueError("n_layers must be non-negative")
        self.variant = variant
        self.grid = grid
        self.n_layers = n_layers
        self._sqrt_cv = np.sqrt(grid.cell_volume)

    @cached_property
    def laplacian(self):
        return neumann_laplacian(self.grid)

    @cached_property
    def base_operator(self) -> PrecisionOperator:
        v = self.variant
        return constant_precision(self.grid, v.base_gamma ** 2, v.alpha, v.sigma, self.laplacian)

    @cached_property
    def base_factor(self) -> np.ndarray:
        return cholesky_with_jitter(stationary_correlation(self.grid.points, self.variant.base))[0]

    def operator(self, u) -> PrecisionOperator:
        v = self.variant
        return assemble_precision(self.grid, u, v.F, v.alpha, v.sigma, self.laplacian)

    def correlation(self, u) -> np.ndarray:
        return build_correlation_matrix(self.grid.points, u, self.variant.F, self.variant.base)

    def first_layer(self, xi0):
        if isinstance(self.variant, CovOperator):
            return self.base_operator.solve(xi0 / self._sqrt_cv)
        return self.base_factor @ xi0

    def next_layer(self, u, xi):
        if isinstance(self.variant, CovOperator):
            return self.operator(u).solve(xi / self._sqrt_cv)
        return cholesky_with_jitter(self.correlation(u))[0] @ xi

    def transform(self, xi) -> np.ndarray:
        """``T(xi)``; ``xi`` has shape ``(n_layers, N)``."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.n_layers, self.grid.size):
            raise ValueError(f"xi has shape {xi.shape}, expected {(self.n_layers, self.grid.size)}")
        u = np.empty_like(xi)
        for n in range(self.n_layers):
            u[n] = self.first_layer(xi[n]) if n == 0 else self.next_layer(u[n - 1], xi[n])
        return u

    def top_layer(self, u_prev=None):
        """Covariance of the layer following ``u_prev`` (the base layer if None)."""
        if isinstance(self.variant, CovOperator):
            op = self.base_operator if u_prev is None else self.operator(u_prev)
            return OperatorTopLayer(op)
        if u_prev is None:
            return DenseTopLayer(stationary_correlation(self.grid.points, self.variant.base))
        return DenseTopLayer(self.correlation(u_prev))

    def length_scale(self, u) -> np.ndarray:
        """``F(u)**(1/2)``, the local length-scale parameter carried by a layer."""
        return np.sqrt(self.variant.F(u))


def whiten_forward(xi, prior: DeepPrior) -> np.ndarray:
    """The whitening map ``T``."""
    return prior.transform(xi)


# ---------------------------------------------------------------------------
# potentials


def potential_phi(u, dataset: Dataset, A) -> float:
    """Data misfit ``0.5 |Gamma^-1/2 (y - A u)|**2``."""
    r = dataset.y - A @ np.asarray(u, dtype=float)
    if dataset.noise_cov is None:
        return float(0.5 * (r @ r) / dataset.noise_std ** 2)
    s = sla.solve_triangular(dataset._noise_chol, r, lower=True)
    return float(0.5 * (s @ s))


@dataclass
class MarginalTerms:
    """Factorized ``M = A C A^T + Gamma`` for one conditioning layer."""

    top: object
    chol: tuple
    value: float


def _dense_adjoint(A) -> np.ndarray:
    return np.asarray(A.T.toarray() if sp.issparse(A) else np.asarray(A).T, dtype=float)


def marginal_terms(top, dataset: Dataset, At: np.ndarray) -> MarginalTerms:
    M = top.obs_cov(At) + dataset.noise_covariance()
    M = 0.5 * (M + M.T)
    try:
        cf = sla.cho_factor(M, lower=True)
    except np.linalg.LinAlgError:
        raise FactorizationError("marginal covariance A C A^T + Gamma is not positive definite") from None
    alpha = sla.cho_solve(cf, dataset.y)
    value = 0.5 * dataset.y @ alpha + np.sum(np.log(np.diag(cf[0])))
    return MarginalTerms(top, cf, float(value))


def potential_psi(u_top, dataset: Dataset, construction, grid: Grid, A=None) -> float:
    """Marginal potential ``0.5 y^T M^-1 y + 0.5 log det M``.

    Here ``M = A C(u_top) A^T + Gamma``, and ``u_top`` is the layer on which
    the top layer is conditioned; ``None`` means the stationary base layer.
    """
    if A is None:
        A = observation_operator(grid, dataset.obs_points)
    prior = DeepPrior(construction, grid, 0)
    return marginal_terms(prior.top_layer(u_top), dataset, _dense_adjoint(A)).value


class PsiPotential:
    """``Psi`` as a function of the hyper-layer stack, caching the factorizations."""

    def __init__(self, prior: DeepPrior, dataset: Dataset, A):
        self.prior = prior
        self.dataset = dataset
        self.A = A
        self.At = _dense_adjoint(A)

    def evaluate(self, u):
        u_prev = u[-1] if len(u) else None
        terms = marginal_terms(self.prior.top_layer(u_prev), self.dataset, self.At)
        return terms.value, terms

    def __call__(self, u) -> float:
        return self.evaluate(u)[0]


class PhiPotential:
    """``Phi`` applied to the last layer of the stack."""

    def __init__(self, dataset: Dataset, A):
        self.dataset = dataset
        self.A = A

    def __call__(self, u) -> float:
        return potential_phi(u[-1], self.dataset, self.A)


# ---------------------------------------------------------------------------
# GP regression for the top layer


@dataclass
class RegressionResult:
    mean: np.ndarray
    sample: Optional[np.ndarray]
    terms: MarginalTerms = field(repr=False)
    cross: np.ndarray = field(repr=False)

    def covariance(self) -> np.ndarray:
        """``C - C A^T M^-1 A C`` (dense; small grids only)."""
        C = self.terms.top.dense()
        Cy = C - self.cross @ sla.cho_solve(self.terms.chol, self.cross.T)
        return 0.5 * (Cy + Cy.T)


def regress(terms: MarginalTerms, dataset: Dataset, A, At: np.ndarray, rng=None) -> RegressionResult:
    """Conditional mean and (if ``rng`` is given) one draw via Matheron's rule."""
    CA = terms.top.cross_cov(At)
    mean = CA @ sla.cho_solve(terms.chol, dataset.y)
    draw = None
    if rng is not None:
        v = terms.top.sample(rng)
        e = dataset.sample_noise(rng)
        draw = v + CA @ sla.cho_solve(terms.chol, dataset.y - A @ v - e)
    return RegressionResult(mean, draw, terms, CA)


def gp_regress_top_layer(u_top, dataset: Dataset, construction, grid: Grid, rng=None,
                         A=None) -> RegressionResult:
    """Gaussian conditional of the top layer given ``u_top`` and the data.

    Mean ``m_y = C A^T M^-1 y`` and covariance ``C - C A^T M^-1 A C``.
    """
    if A is None:
        A = observation_operator(grid, dataset.obs_points)
    At = _dense_adjoint(A)
    prior = DeepPrior(construction, grid, 0)
    return regress(marginal_terms(prior.top_layer(u_top), dataset, At), dataset, A, At, rng)


# ---------------------------------------------------------------------------
# pCN


@dataclass
class NonCentredState:
    """Current point of the sampler.

    ``u`` is always ``T(xi)`` and ``potential`` its potential value;
    ``aux`` carries whatever the potential cached for reuse.
    """

    xi: np.ndarray
    u: np.ndarray
    potential: float
    beta: np.ndarray
    accepted: np.ndarray
    proposed: np.ndarray
    aux: object = None

    def copy_stats(self):
        return self.accepted.copy(), self.proposed.copy()


def _evaluate(potential, u):
    try:
        if hasattr(potential, "evaluate"):
            return potential.evaluate(u)
        return float(potential(u)), None
    except NumericalError:
        return float("inf"), None


def init_state(prior: DeepPrior, potential, rng, beta=0.1, xi=None) -> NonCentredState:
    """State at ``xi`` (drawn from the prior when omitted)."""
    if xi is None:
        xi = rng.standard_normal((prior.n_layers, prior.grid.size))
    u = prior.transform(xi)
    value, aux = _evaluate(potential, u)
    if not np.isfinite(value):
        raise NumericalError("potential is not finite at the initial state")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (prior.n_layers,)).copy()
    if np.any(beta <= 0) or np.any(beta > 1):
        raise ValueError("beta must lie in (0, 1]")
    L = prior.n_layers
    return NonCentredState(xi, u, value, beta, np.zeros(L, dtype=np.int64),
                           np.zeros(L, dtype=np.int64), aux)


def _propose(xi, beta, rng, layers):
    new = xi.copy()
    for j in layers:
        b = beta[j]
        new[j] = np.sqrt(1.0 - b * b) * xi[j] + b * rng.standard_normal(xi.shape[1])
    return new


def pcn_step(state: NonCentredState, prior: DeepPrior, potential, rng,
             gibbs: bool = False) -> NonCentredState:
    """One pCN update of all layers.

    Joint mode proposes ``xi_hat_j = sqrt(1 - beta_j**2) xi_j + beta_j zeta_j``
    for every layer and accepts with probability
    ``min(1, exp(Phi(T(xi)) - Phi(T(xi_hat))))``. Gibbs mode sweeps the
    layers in order, accepting or rejecting each one separately.
    Statistics count proposals and acceptances per layer.
    """
    L = state.xi.shape[0]
    sweeps = [[j] for j in range(L)] if gibbs else [list(range(L))]
    xi, u, value, aux = state.xi, state.u, state.potential, state.aux
    accepted, proposed = state.copy_stats()
    for layers in sweeps:
        cand = _propose(xi, state.beta, rng, layers)
        try:
            u_new = prior.transform(cand)
            new_value, new_aux = _evaluate(potential, u_new)
        except NumericalError:
            new_value, new_aux = float("inf"), None
        log_u = np.log(rng.random())
        proposed[layers] += 1
        if np.isfinite(new_value) and log_u < value - new_value:
            xi, u, value, aux = cand, u_new, new_value, new_aux
            accepted[layers] += 1
    return NonCentredState(xi, u, value, state.beta, accepted, proposed, aux)


def adapt_beta(beta, accepted, proposed, target: float = 0.3, c: float = 1.0,
               min_window: int = 50):
    """Multiplicative step-size update ``beta * exp(c (rate - target))``, clipped to ``[1e-4, 1]``.

    ``accepted`` and ``proposed`` are window counts (scalars or per layer).
    """
    proposed = np.asarray(proposed)
    if np.any(proposed < min_window):
        raise ValueError(f"adaptation window needs at least {min_window} steps")
    rate = np.asarray(accepted) / proposed
    return np.clip(np.asarray(beta, dtype=float) * np.exp(c * (rate - target)), 1e-4, 1.0)


# ---------------------------------------------------------------------------
# driver


@dataclass
class PosteriorSummary:
    """Posterior statistics on the sampling grid.

    Quantile bands are pointwise.
    """

    points: np.ndarray
    mean: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    layer_scales: np.ndarray
    acceptance_rate: Optional[float]
    beta: list
    n_samples: int
    errors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "errors": self.errors,
            "acceptance_rate": self.acceptance_rate,
            "beta": [float(b) for b in self.beta],
            "n_samples": self.n_samples,
            "quantile_bands": "pointwise",
            "points": self.points.tolist(),
            "mean": self.mean.tolist(),
            "q05": self.q05.tolist(),
            "q50": self.q50.tolist(),
            "q95": self.q95.tolist(),
            "layer_scales": self.layer_scales.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path, header: str = "") -> None:
        names = ["x", "y"][: self.points.shape[1]]
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write(",".join(names + ["mean", "q05", "q50", "q95"]) + "\n")
            for i in range(self.mean.size):
                vals = list(self.points[i]) + [self.mean[i], self.q05[i], self.q50[i], self.q95[i]]
                fh.write(",".join(repr(float(v)) for v in vals) + "\n")


@dataclass
class ChainRecord:
    """Trace information of one run."""

    potentials: np.ndarray
    betas: np.ndarray
    accepted: int
    proposed: int
    draws: Optional[np.ndarray] = None
    elapsed: float = 0.0


CHECKPOINT_MAGIC = b"DGPCKPT1"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, header: dict, arrays: dict) -> None:
    """Write ``magic | header length | JSON header | npz payload``."""
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    n = int.from_bytes(data[8:16], "little")
    header = json.loads(data[16:16 + n].decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version")
    with np.load(io.BytesIO(data[16 + n:])) as f:
        arrays = {k: f[k] for k in f.files}
    return header, arrays


class Sampler:
    """Non-centred pCN sampler with top-layer regression.

    Parameters
    ----------
    prior : DeepPrior
        Hyper-layers (``n_layers`` may be zero).
    dataset : Dataset
    A : sparse matrix
        Observation operator on ``prior.grid``.
    samples, burn_in : int
        Total steps and how many of them are discarded.
    beta_init : float
    adapt : bool
        Tune ``beta`` towards 30% acceptance during burn-in only.
    thin : int
        Keep every ``thin``-th post-burn-in state.
    window : int
        Adaptation window length.
    gibbs : bool
        Layer-by-layer acceptance instead of joint acceptance.
    """

    def __init__(self, prior: DeepPrior, dataset: Dataset, A, samples: int, burn_in: int,
                 beta_init: float = 0.1, adapt: bool = True, thin: int = 1, window: int = 50,
                 gibbs: bool = False, store_draws: bool = True):
        self.prior = prior
        self.dataset = dataset
        self.A = A
        self.At = _dense_adjoint(A)
        self.samples = int(samples)
        self.burn_in = int(burn_in)
        self.beta_init = beta_init
        self.adapt = adapt
        self.thin = int(thin)
        self.window = int(window)
        self.gibbs = gibbs
        self.store_draws = store_draws
        self.potential = PsiPotential(prior, dataset, A)

    # state kept between steps and in checkpoints
    def _fresh(self, rng):
        L, N = self.prior.n_layers, self.prior.grid.size
        self.step = 0
        self.state = init_state(self.prior, self.potential, rng, self.beta_init)
        self.win_acc = np.zeros(L, dtype=np.int64)
        self.win_prop = np.zeros(L, dtype=np.int64)
        self.post_acc = 0
        self.post_prop = 0
        self.mean_sum = np.zeros(N)
        self.scale_sum = np.zeros((L, N))
        self.kept = 0
        self.draws = []
        self.potentials = []
        self.betas = []

    def _header(self, rng, meta):
        return {"version": CHECKPOINT_VERSION, "step": self.step, "kept": self.kept,
                "post_acc": self.post_acc, "post_prop": self.post_prop,
                "potential": self.state.potential,
                "rng": rng.bit_generator.state, **meta}

    def save(self, path, rng, meta=None):
        arrays = dict(xi=self.state.xi, beta=self.state.beta, accepted=self.state.accepted,
                      proposed=self.state.proposed, win_acc=self.win_acc, win_prop=self.win_prop,
                      mean_sum=self.mean_sum, scale_sum=self.scale_sum,
                      potentials=np.asarray(self.potentials, dtype=float),
                      betas=np.asarray(self.betas, dtype=float).reshape(-1, self.prior.n_layers))
        if self.draws:
            arrays["draws"] = np.stack(self.draws)
        save_checkpoint(path, self._header(rng, meta or {}), arrays)

    def restore(self, path, rng, meta=None):
        header, arrays = load_checkpoint(path)
        for key, val in (meta or {}).items():
            if header.get(key) != val:
                raise ValueError(f"checkpoint {key} mismatch: {header.get(key)!r} != {val!r}")
        rng.bit_generator.state = header["rng"]
        self.step = header["step"]
        self.kept = header["kept"]
        self.post_acc = header["post_acc"]
        self.post_prop = header["post_prop"]
        xi = arrays["xi"]
        u = self.prior.transform(xi)
        value, aux = _evaluate(self.potential, u)
        self.state = NonCentredState(xi, u, value, arrays["beta"], arrays["accepted"],
                                     arrays["proposed"], aux)
        self.win_acc, self.win_prop = arrays["win_acc"], arrays["win_prop"]
        self.mean_sum, self.scale_sum = arrays["mean_sum"], arrays["scale_sum"]
        self.potentials = list(arrays["potentials"])
        self.betas = [b for b in arrays["betas"]]
        self.draws = list(arrays["draws"]) if "draws" in arrays else []

    def run(self, rng, checkpoint_path=None, checkpoint_every: int = 0, resume: bool = False,
            max_steps: Optional[int] = None, meta=None):
        """Advance the chain to ``samples`` steps (or ``max_steps`` more)."""
        if resume:
            self.restore(checkpoint_path, rng, meta)
        else:
            self._fresh(rng)
        stop = self.samples if max_steps is None else min(self.samples, self.step + max_steps)
        st = self.state
        t0 = time.perf_counter()
        while self.step < stop:
            before_acc = st.accepted.copy()
            st = pcn_step(st, self.prior, self.potential, rng, self.gibbs)
            self.step += 1
            gained = st.accepted - before_acc
            if self.step <= self.burn_in:
                self.win_acc += gained
                self.win_prop += 1
                if self.adapt and self.win_prop.min() >= self.window:
                    st.beta = adapt_beta(st.beta, self.win_acc, self.win_prop, min_window=self.window)
                    self.win_acc[:] = 0
                    self.win_prop[:] = 0
            else:
                self.post_acc += int(gained.max() if not self.gibbs else gained.sum())
                self.post_prop += 1 if not self.gibbs else len(gained)
                if (self.step - self.burn_in) % self.thin == 0:
                    self._accumulate(st, rng)
            self.potentials.append(st.potential)
            self.betas.append(st.beta.copy())
            self.state = st
            if checkpoint_path and checkpoint_every and self.step % checkpoint_every == 0:
                self.save(checkpoint_path, rng, meta)
        self.state = st
        self.elapsed = time.perf_counter() - t0
        return self.step >= self.samples

    def _accumulate(self, st, rng):
        res = regress(st.aux, self.dataset, self.A, self.At, rng)
        self.mean_sum += res.mean
        for j in range(self.prior.n_layers):
            self.scale_sum[j] += self.prior.length_scale(st.u[j])
        if self.store_draws:
            self.draws.append(res.sample)
        self.kept += 1

    def summary(self, meta=None) -> PosteriorSummary:
        if self.kept == 0:
            raise ValueError("empty chain")
        draws = np.stack(self.draws)
        q05, q50, q95 = np.quantile(draws, [0.05, 0.5, 0.95], axis=0)
        rate = self.post_acc / self.post_prop if self.post_prop else None
        return PosteriorSummary(self.prior.grid.points, self.mean_sum / self.kept, q05, q50, q95,
                                self.scale_sum / self.kept, rate, list(self.state.beta),
                                self.kept, meta=dict(meta or {}))

    def record(self) -> ChainRecord:
        return ChainRecord(np.asarray(self.potentials), np.asarray(self.betas),
                           self.post_acc, self.post_prop,
                           np.stack(self.draws) if self.draws else None,
                           getattr(self, "elapsed", 0.0))


def exact_regression_summary(prior: DeepPrior, dataset: Dataset, A, meta=None) -> PosteriorSummary:
    """Closed-form posterior when there are no hyper-layers (plain GP regression)."""
    At = _dense_adjoint(A)
    terms = marginal_terms(prior.top_layer(None), dataset, At)
    res = regress(terms, dataset, A, At)
    sd = np.sqrt(np.clip(np.diag(res.covariance()), 0.0, None))
    z = _normal.ppf(0.95)
    return PosteriorSummary(prior.grid.points, res.mean, res.mean - z * sd, res.mean.copy(),
                            res.mean + z * sd, np.zeros((0, prior.grid.size)), None, [], 0,
                            meta=dict(meta or {}))


@dataclass
class InferenceResult:
    summary: PosteriorSummary
    record: Optional[ChainRecord]
    dataset: Dataset
    truth: Optional[np.ndarray]
    sigma: Optional[float]


def build_model(spec, grid: Grid, rng_calibration):
    """Prior variant with ``sigma`` fixed or calibrated, plus the calibrated value."""
    from .fields import calibrate_sigma

    c = spec.construction
    sigma = None
    if c.kind == "covop":
        sigma = c.sigma
        if sigma is None:
            sigma = calibrate_sigma(grid, c.alpha, c.pilot, rng_calibration, c.base_gamma)
    return c.variant(sigma), sigma


def run_inference(spec, rng=None, dataset: Optional[Dataset] = None, truth=None,
                  checkpoint_path=None, checkpoint_every: int = 0, resume: bool = False,
                  max_steps: Optional[int] = None) -> InferenceResult:
    """Run the regression experiment described by ``spec``.

    ``n_layers - 1`` hyper-layers are sampled with pCN on ``Psi`` and the top
    layer is regressed for every kept state; ``n_layers = 1`` is plain GP
    regression in closed form. Random streams for data, calibration and the
    chain are derived from ``spec.seed`` unless ``rng`` is given.

    With ``max_steps`` the run stops early; the returned summary is then
    ``None`` unless the chain is complete, and a checkpoint (if requested) lets
    a later call with ``resume=True`` continue to the identical result.
    """
    from .experiments import compute_error, generate_data, layout_description

    spec.validate()
    seeds = np.random.SeedSequence(spec.seed).spawn(3)
    rng_data, rng_cal, rng_mcmc = (np.random.default_rng(s) for s in seeds)
    if rng is not None:
        rng_mcmc = rng
    if dataset is None:
        dataset, truth = generate_data(spec, rng_data)
    grid = Grid(spec.d, spec.sampling_mesh)
    A = observation_operator(grid, dataset.obs_points, spec.observation)
    variant, sigma = build_model(spec, grid, rng_cal)
    meta = {"spec_hash": spec.spec_hash(), "seed": spec.seed, "name": spec.name,
            "n_layers": spec.n_layers, "J": dataset.J, "noise_std": spec.noise_std,
            "truth": spec.truth, "sampling_mesh": spec.sampling_mesh,
            "generation_mesh": spec.generation_mesh, "sigma": sigma,
            "observation_points": layout_description(spec)}
    n_hyper = spec.n_layers - 1
    prior = DeepPrior(variant, grid, n_hyper)
    record = None
    if n_hyper == 0:
        summary = exact_regression_summary(prior, dataset, A, meta)
    else:
        m = spec.mcmc
        sampler = Sampler(prior, dataset, A, m.samples, m.burn_in, m.beta_init, m.adapt,
                          m.thin, m.window, m.gibbs)
        done = sampler.run(rng_mcmc, checkpoint_path, checkpoint_every, resume, max_steps,
                           meta={"spec_hash": meta["spec_hash"], "seed": spec.seed})
        if checkpoint_path and (not checkpoint_every or sampler.step % checkpoint_every):
            sampler.save(checkpoint_path, rng_mcmc, {"spec_hash": meta["spec_hash"], "seed": spec.seed})
        if not done:
            return InferenceResult(None, sampler.record(), dataset, truth, sigma)
        summary = sampler.summary(meta)
        record = sampler.record()
    if truth is not None:
        summary.errors = {"L1": compute_error(summary.mean, truth, "L1"),
                          "L2": compute_error(summary.mean, truth, "L2")}
    return InferenceResult(summary, record, dataset, truth, sigma)
