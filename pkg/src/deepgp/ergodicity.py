"""Empirical diagnostics for the long-depth behaviour of deep-GP chains."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import norm as _normal

from .constructions import ChainTrajectory, DeepChainConfig, noise_shape, run_chain
from .kernels import SquaredExponential

EULER_GAMMA = float(np.euler_gamma)
#: Fourier-mode threshold separating almost-sure decay from divergence.
MODE_THRESHOLD = 2.0 * np.exp(EULER_GAMMA)
#: ``E log eta**2`` for a standard normal ``eta``.
LOG_CHI2_MEAN = float(-EULER_GAMMA - np.log(2.0))


# ---------------------------------------------------------------------------
# spread decay


@dataclass
class SpreadSeries:
    """Per-layer spread statistics of an ensemble of chains.

    Attributes
    ----------
    mean_square : ndarray
        Ensemble mean of the mean pairwise squared spread, per layer.
    conditional_mean_square : ndarray or None
        Ratio-estimator series built from the exact one-step conditional
        expectation of the spread (available when the kernel is known).
    max_spread : ndarray
        Ensemble mean of the largest pairwise spread, per layer.
    replicas : int
    rate, rate_ci : float, tuple
        Fitted log-decay rate per layer and its bootstrap interval.
    reference_rate : float or None
        ``log(m sigma**2 / w**2)``.
    estimator : str
        ``"conditional"`` or ``"empirical"``.
    verdict : str
    """

    mean_square: np.ndarray
    conditional_mean_square: Optional[np.ndarray]
    max_spread: np.ndarray
    replicas: int
    rate: float
    rate_ci: tuple
    reference_rate: Optional[float]
    estimator: str
    verdict: str
    skip: int = 2

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items()}
        for k, v in out.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
        out["rate_ci"] = list(self.rate_ci)
        return out


def _as_ensemble(ensemble) -> np.ndarray:
    if isinstance(ensemble, np.ndarray):
        arr = ensemble
    else:
        arr = np.stack([t.stacked() if isinstance(t, ChainTrajectory) else np.asarray(t)
                        for t in ensemble])
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4:
        raise ValueError("ensemble must have shape (replicas, layers, nodes[, width])")
    return arr


def _pairwise_sq(arr: np.ndarray) -> np.ndarray:
    # arr: (..., N, p) -> (..., N(N-1)/2) squared distances of node pairs
    n = arr.shape[-2]
    i, j = np.triu_indices(n, 1)
    diff = arr[..., i, :] - arr[..., j, :]
    return np.sum(np.abs(diff) ** 2, axis=-1)


def pair_spreads(ensemble) -> np.ndarray:
    """Mean pairwise squared spread, shape ``(replicas, layers)``."""
    arr = _as_ensemble(ensemble)
    if arr.shape[2] < 2:
        return np.zeros(arr.shape[:2])
    return _pairwise_sq(arr).mean(axis=-1)


def conditional_spreads(ensemble, kernel: SquaredExponential, connect_input: bool = False,
                        points=None) -> np.ndarray:
    """``E[S_{n+1} | u_n]`` for the composition step, shape ``(replicas, layers)``.

    For ``m`` i.i.d. components with kernel ``h`` each pair contributes
    ``2 m sigma**2 (1 - exp(-|z_i - z_j|**2 / (2 w**2)))`` where ``z`` is the
    layer value, concatenated with the input coordinates if requested.
    """
    arr = _as_ensemble(ensemble)
    width = arr.shape[-1]
    d2 = _pairwise_sq(arr)
    if connect_input:
        pts = np.asarray(points, dtype=float).reshape(arr.shape[2], -1)
        d2 = d2 + _pairwise_sq(pts)
    return (2.0 * width * kernel.variance * -np.expm1(-kernel.rate * d2)).mean(axis=-1)


def _slope(series: np.ndarray, skip: int) -> float:
    n = np.arange(series.size)
    keep = (n >= skip) & (series > 0) & np.isfinite(series)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(n[keep], np.log(series[keep]), 1)[0])


def _ratio_series(spread: np.ndarray, cond: np.ndarray) -> np.ndarray:
    den = spread[:, :-1].sum(axis=0)
    num = cond[:, :-1].sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(den > 0, num / den, 0.0)
    return spread[:, 0].mean() * np.concatenate([[1.0], np.cumprod(ratios)])


def fit_spread_decay(ensemble, kernel: Optional[SquaredExponential] = None,
                     connect_input: bool = False, points=None, skip: int = 2,
                     n_boot: int = 200, level: float = 0.95, rng=None,
                     min_replicas: int = 100) -> SpreadSeries:
    """Fit the geometric decay rate of the mean-square pairwise spread.

    The rate is the least-squares slope of the log spread series over layers
    ``>= skip``. With a known kernel the series is the ratio estimator
    ``M_{n+1} = M_n * sum_r E[S_{n+1} | u_n^r] / sum_r S_n^r``. It has the
    same expectation as the plain ensemble mean but stays resolved when the
    plain mean is dominated by a few replicas, which happens within a few
    layers because per-step factors are multiplicative and heavy tailed.
    Without a kernel the plain ensemble mean is fitted.

    Parameters
    ----------
    ensemble : array_like or list of ChainTrajectory
        Shape ``(replicas, layers, nodes[, width])``.
    kernel : SquaredExponential, optional
        Composition kernel; enables the conditional estimator and the
        reference rate ``log(m sigma**2 / w**2)``.
    connect_input : bool
    points : array_like, optional
        Input coordinates, needed when ``connect_input`` is set.
    skip : int
        Number of leading layers left out of the fit.
    n_boot : int
        Bootstrap resamples of replicas for the interval.
    level : float
    rng : numpy.random.Generator, optional
    min_replicas : int
    """
    arr = _as_ensemble(ensemble)
    reps, layers = arr.shape[:2]
    if reps < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas, got {reps}")
    if rng is None:
        rng = np.random.default_rng(0)
    spread = pair_spreads(arr)
    maxs = np.sqrt(_pairwise_sq(arr).max(axis=-1)).mean(axis=0) if arr.shape[2] > 1 else np.zeros(layers)
    mean_sq = spread.mean(axis=0)
    cond = None
    ref = None
    if kernel is not None:
        cond = conditional_spreads(arr, kernel, connect_input, points)
        ref = float(np.log(arr.shape[-1] * kernel.variance * 2.0 * kernel.rate))
    if not np.any(spread > 0):
        return SpreadSeries(mean_sq, None, maxs, reps, float("-inf"), (float("-inf"),) * 2,
                            ref, "conditional" if cond is not None else "empirical",
                            "already trivial", skip)

    def estimate(idx):
        if cond is not None:
            return _slope(_ratio_series(spread[idx], cond[idx]), skip)
        return _slope(spread[idx].mean(axis=0), skip)

    rate = estimate(np.arange(reps))
    boots = np.array([estimate(rng.integers(0, reps, reps)) for _ in range(n_boot)])
    boots = boots[np.isfinite(boots)]
    a = (1.0 - level) / 2.0
    ci = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a))) if boots.size else (float("nan"),) * 2
    if ci[1] < 0:
        verdict = "contracting"
    elif ci[0] > 0:
        verdict = "expanding"
    else:
        verdict = "not significantly contracting"
    series = _ratio_series(spread, cond) if cond is not None else None
    return SpreadSeries(mean_sq, series, maxs, reps, rate, ci, ref,
                        "conditional" if cond is not None else "empirical", verdict, skip)


# ---------------------------------------------------------------------------
# single Fourier modes


@dataclass
class ModeVerdict:
    """Almost-sure fate of one Fourier coefficient of a convolution chain.

    ``lyapunov`` is ``(1/n) sum log |u_hat_j / u_hat_{j-1}|**2``; the
    verdict is ``decay`` when ``lyapunov + ci < 0``, ``diverge`` when
    ``lyapunov - ci > 0`` and ``indeterminate`` otherwise.
    """

    mode: Optional[int]
    lambda2: float
    threshold: float
    lyapunov: float
    ci: float
    steps: int
    verdict: str
    mean_square_exponent: float
    lyapunov_reference: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def simulate_mode_chain(lambda2: float, n: int, rng, replicas: int = 1,
                        log_u0: float = 0.0) -> np.ndarray:
    """``log |u_hat_j|**2`` for ``j = 0..n`` under ``u_hat_{j+1} = u_hat_j lambda eta``.

    Works in log space so long chains neither overflow nor underflow.
    Returns shape ``(replicas, n + 1)``.
    """
    eta = rng.standard_normal((replicas, n))
    inc = np.log(lambda2) + np.log(np.square(eta))
    out = np.empty((replicas, n + 1))
    out[:, 0] = log_u0
    np.cumsum(inc, axis=1, out=out[:, 1:])
    out[:, 1:] += log_u0
    return out


def mode_classifier(trajectory, lambda2: float, level: float = 0.80,
                    log_modulus: bool = False, mode: Optional[int] = None,
                    min_length: int = 1000) -> ModeVerdict:
    """Classify a coefficient trajectory as decaying or diverging.

    Parameters
    ----------
    trajectory : array_like
        ``u_hat_0(k), ..., u_hat_n(k)``, or ``log |u_hat_j(k)|**2`` when
        ``log_modulus`` is set.
    lambda2 : float
        ``|lambda_k|**2`` of the driving noise.
    level : float
        Two-sided normal-approximation level of the interval around the
        Lyapunov estimate; ``level=0`` classifies by the sign alone.
    min_length : int
        Shortest admissible ``n``.

    Notes
    -----
    A coefficient that underflows to exactly zero part-way through is
    classified as decaying, using the increments before the underflow.
    """
    traj = np.asarray(trajectory)
    n = traj.size - 1
    if n < min_length:
        raise ValueError(f"trajectory has {n} steps, need at least {min_length}")
    z = float(_normal.ppf(0.5 + level / 2.0))
    ref = float(np.log(lambda2) + LOG_CHI2_MEAN)
    base = dict(mode=mode, lambda2=float(lambda2), threshold=MODE_THRESHOLD,
                mean_square_exponent=float(np.log(lambda2)), lyapunov_reference=ref)
    if log_modulus:
        logs = traj.astype(float)
    else:
        with np.errstate(divide="ignore"):
            logs = 2.0 * np.log(np.abs(traj))
    if not np.isfinite(logs[0]):
        return ModeVerdict(lyapunov=float("nan"), ci=float("nan"), steps=n,
                           verdict="indeterminate", **base)
    dead = np.flatnonzero(~np.isfinite(logs))
    underflow = dead.size > 0
    if underflow:
        logs = logs[:dead[0]]
    inc = np.diff(logs)
    if inc.size < 2:
        return ModeVerdict(lyapunov=float("-inf"), ci=float("nan"), steps=inc.size,
                           verdict="decay", **base)
    est = float(inc.mean())
    ci = float(z * inc.std(ddof=1) / np.sqrt(inc.size))
    if underflow or est + ci < 0:
        verdict = "decay"
    elif est - ci > 0:
        verdict = "diverge"
    else:
        verdict = "indeterminate"
    return ModeVerdict(lyapunov=est, ci=ci, steps=inc.size, verdict=verdict, **base)


@dataclass
class LyapunovEstimate:
    estimate: float
    se: float
    n: int
    reference: float = LOG_CHI2_MEAN


def lyapunov_constant_estimate(n: int, rng) -> LyapunovEstimate:
    """Monte-Carlo mean of ``log eta**2`` over ``n`` standard normals."""
    if n < 10_000:
        raise ValueError("n must be at least 1e4")
    x = np.log(np.square(rng.standard_normal(n)))
    return LyapunovEstimate(float(x.mean()), float(x.std(ddof=1) / np.sqrt(n)), int(n))


# ---------------------------------------------------------------------------
# norms and coupling


@dataclass
class NormTrace:
    norms: np.ndarray
    running_mean: np.ndarray

    def relative_change(self, fraction: float = 0.5) -> float:
        """Relative spread of the running mean over the trailing ``fraction``."""
        tail = self.running_mean[int(len(self.running_mean) * (1 - fraction)):]
        return float((tail.max() - tail.min()) / abs(tail[-1]))


def norm_trace(trajectory) -> NormTrace:
    """Per-layer discrete ``L^2`` norms and their cumulative mean."""
    norms = np.asarray(trajectory.norms if isinstance(trajectory, ChainTrajectory) else trajectory,
                       dtype=float)
    if norms.size < 3:
        raise ValueError("norm_trace needs depth >= 2")
    return NormTrace(norms, np.cumsum(norms) / np.arange(1, norms.size + 1))


def _realify(x: np.ndarray) -> np.ndarray:
    x = x.reshape(x.shape[0], -1)
    return np.hstack([x.real, x.imag]) if np.iscomplexobj(x) else x


def energy_distance(x, y) -> float:
    """V-statistic energy distance ``2E|X-Y| - E|X-X'| - E|Y-Y'|``."""
    x = _realify(np.asarray(x))
    y = _realify(np.asarray(y))
    return float(2.0 * cdist(x, y).mean() - cdist(x, x).mean() - cdist(y, y).mean())


@dataclass
class CouplingDiagnostic:
    """Energy distance between two ensembles started from different layers.

    ``samples_a`` and ``samples_b`` have shape ``(replicas, depth + 1, ...)``.
    """

    distances: np.ndarray
    samples_a: np.ndarray = field(repr=False)
    samples_b: np.ndarray = field(repr=False)

    def bootstrap_difference(self, later: int, earlier: int, n_boot: int = 500,
                             level: float = 0.95, rng=None):
        """Bootstrap interval of ``D[later] - D[earlier]``."""
        if rng is None:
            rng = np.random.default_rng(0)
        ra, rb = self.samples_a.shape[0], self.samples_b.shape[0]
        diffs = np.empty(n_boot)
        for b in range(n_boot):
            ia = rng.integers(0, ra, ra)
            ib = rng.integers(0, rb, rb)
            A, B = self.samples_a[ia], self.samples_b[ib]
            diffs[b] = (energy_distance(A[:, later], B[:, later])
                        - energy_distance(A[:, earlier], B[:, earlier]))
        a = (1.0 - level) / 2.0
        est = self.distances[later] - self.distances[earlier]
        return float(est), (float(np.quantile(diffs, a)), float(np.quantile(diffs, 1 - a)))


def two_start_coupling_diagnostic(cfg: DeepChainConfig, u0_a, u0_b, depth: int,
                                  replicas: int, rng, shared_noise: bool = False,
                                  min_replicas: int = 200) -> CouplingDiagnostic:
    """Run two ensembles from ``u0_a`` and ``u0_b`` and compare layer by layer.

    Energy distance stands in for total variation, which is not estimable
    for high-dimensional samples. With ``shared_noise`` both chains of a
    replica consume the same noise blocks.
    """
    if replicas < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas")
    shape = noise_shape(cfg)
    A, B = [], []
    for _ in range(replicas):
        na = [rng.standard_normal(shape) for _ in range(depth)]
        nb = na if shared_noise else [rng.standard_normal(shape) for _ in range(depth)]
        A.append(run_chain(cfg, u0_a, depth=depth, noise=na).stacked())
        B.append(run_chain(cfg, u0_b, depth=depth, noise=nb).stacked())
    A, B = np.stack(A), np.stack(B)
    dist = np.array([energy_distance(A[:, n], B[:, n]) for n in range(depth + 1)])
    return CouplingDiagnostic(dist, A, B)
