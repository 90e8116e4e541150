import mpmath
import numpy as np
import pytest

from deepgp.constructions import (Convolution, CovFunction, DeepChainConfig,
                                  run_chain)
from deepgp.ergodicity import (LOG_CHI2_MEAN, MODE_THRESHOLD, energy_distance,
                               fit_spread_decay, lyapunov_constant_estimate,
                               mode_classifier, norm_trace,
                               simulate_mode_chain,
                               two_start_coupling_diagnostic)
from deepgp.fields import Grid, SpectralCovariance


def test_constants_against_extended_precision():
    mpmath.mp.dps = 30
    assert MODE_THRESHOLD == pytest.approx(float(2 * mpmath.exp(mpmath.euler)), rel=1e-15)
    assert f"{MODE_THRESHOLD:.10f}" == f"{float(2 * mpmath.exp(mpmath.euler)):.10f}"
    # E log eta^2 by quadrature against the chi-square(1) density
    f = lambda x: mpmath.log(x) * x ** -0.5 * mpmath.exp(-x / 2) / mpmath.sqrt(2 * mpmath.pi)
    assert LOG_CHI2_MEAN == pytest.approx(float(mpmath.quad(f, [0, 1, mpmath.inf])), rel=1e-12)


# ---------------------------------------------------------------------------
# spread decay


@pytest.mark.parametrize("c", [0.1, 0.25, 0.5])
def test_fit_recovers_known_contraction(c):
    rng = np.random.default_rng(int(c * 100))
    reps, layers, nodes = 300, 12, 6
    z = rng.normal(size=(reps, layers, nodes))
    ens = z * np.sqrt(c) ** np.arange(layers)[None, :, None]
    res = fit_spread_decay(ens, rng=rng)
    assert abs(res.rate - np.log(c)) < 0.1
    assert res.verdict == "contracting"


def test_constant_ensemble_is_already_trivial():
    ens = np.ones((100, 5, 8))
    res = fit_spread_decay(ens)
    assert res.verdict == "already trivial"
    assert np.all(res.mean_square == 0)


def test_fit_needs_replicas():
    with pytest.raises(ValueError):
        fit_spread_decay(np.zeros((10, 5, 4)))


# ---------------------------------------------------------------------------
# single modes


def test_classifier_brackets_threshold():
    rng = np.random.default_rng(0)
    for lam2, want in ((3.4, "decay"), (3.8, "diverge")):
        logs = simulate_mode_chain(lam2, 10_000, rng, 500)
        verdicts = [mode_classifier(t, lam2, level=0.0, log_modulus=True).verdict for t in logs]
        assert verdicts.count(want) >= 450


def test_classifier_accepts_raw_coefficients():
    rng = np.random.default_rng(1)
    eta = rng.standard_normal(1500)
    u = np.concatenate([[1.0], np.cumprod(np.sqrt(1.5) * eta)])
    v = mode_classifier(u, 1.5)
    assert v.verdict == "decay"
    assert v.lyapunov == pytest.approx(np.mean(np.log(1.5 * eta ** 2)))
    assert v.mean_square_exponent == pytest.approx(np.log(1.5))
    assert v.threshold == MODE_THRESHOLD


def test_classifier_zero_start_and_length():
    assert mode_classifier(np.zeros(1001), 2.0).verdict == "indeterminate"
    with pytest.raises(ValueError):
        mode_classifier(np.ones(100), 2.0)


def test_classifier_underflow_counts_as_decay():
    u = np.concatenate([[1.0], 0.5 ** np.arange(1, 1200)])
    u[1100:] = 0.0
    assert mode_classifier(u, 1.0).verdict == "decay"


def test_mean_square_growth_below_threshold():
    # lambda^2 = 2: almost-sure decay, yet E|u_n|^2 = 2^n
    rng = np.random.default_rng(3)
    n, reps = 8, 1_000_000
    logs = simulate_mode_chain(2.0, n, rng, reps)
    ms = np.exp(logs).mean(axis=0)
    slope = np.polyfit(np.arange(n + 1), np.log(ms), 1)[0]
    assert abs(slope - np.log(2)) < 0.1 * np.log(2)


def test_lyapunov_estimate_properties():
    a = lyapunov_constant_estimate(10_000, np.random.default_rng(5))
    b = lyapunov_constant_estimate(10_000, np.random.default_rng(5))
    assert a == b
    c = lyapunov_constant_estimate(40_000, np.random.default_rng(6))
    assert a.se / c.se == pytest.approx(2.0, rel=0.1)
    assert a.reference == LOG_CHI2_MEAN
    with pytest.raises(ValueError):
        lyapunov_constant_estimate(9_999, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# norms


def test_norm_trace_constant():
    tr = norm_trace(np.full(10, 2.5))
    assert np.all(tr.running_mean == 2.5) and tr.relative_change() == 0.0
    with pytest.raises(ValueError):
        norm_trace(np.ones(2))


def test_covfun_mean_square_norm_is_one():
    grid = Grid(1, 33)
    cfg = DeepChainConfig(CovFunction(), grid, depth=50)
    per_chain = []
    for seed in range(60):
        t = run_chain(cfg, rng=np.random.default_rng(seed))
        per_chain.append(np.mean([np.sum(u ** 2) / grid.size for u in t.layers[10:51]]))
    per_chain = np.array(per_chain)
    assert abs(per_chain.mean() - 1) < 3 * per_chain.std(ddof=1) / np.sqrt(per_chain.size)


# ---------------------------------------------------------------------------
# energy distance and coupling


def test_energy_distance_basics(rng):
    x = rng.normal(size=(200, 3))
    assert energy_distance(x, x) == pytest.approx(0.0, abs=1e-12)
    y = x + 2.0
    assert energy_distance(x, y) == pytest.approx(energy_distance(y, x))
    assert energy_distance(x, y) > 1.0


def test_energy_distance_brute_force(rng):
    x, y = rng.normal(size=(7, 2)), rng.normal(size=(5, 2))
    dxy = np.mean([np.linalg.norm(a - b) for a in x for b in y])
    dxx = np.mean([np.linalg.norm(a - b) for a in x for b in x])
    dyy = np.mean([np.linalg.norm(a - b) for a in y for b in y])
    assert energy_distance(x, y) == pytest.approx(2 * dxy - dxx - dyy, rel=1e-12)


def test_coupling_identical_starts_shared_noise(rng):
    cfg = DeepChainConfig(CovFunction(), Grid(1, 9), depth=4)
    u0 = rng.normal(size=9)
    diag = two_start_coupling_diagnostic(cfg, u0, u0, 4, 200, rng, shared_noise=True)
    assert np.all(diag.distances == 0.0)


def test_coupling_covfun_forgets_start(rng):
    cfg = DeepChainConfig(CovFunction(), Grid(1, 17), depth=8)
    diag = two_start_coupling_diagnostic(cfg, np.zeros(17), np.full(17, 5.0), 8, 200, rng)
    est, (lo, hi) = diag.bootstrap_difference(8, 1, n_boot=200, rng=rng)
    assert est < 0 and hi < 0


def test_coupling_convolution_collapses(rng):
    cov = SpectralCovariance.brownian_bridge(8)
    cfg = DeepChainConfig(Convolution(cov), Grid(1, 32, periodic=True), depth=150)
    x = cfg.grid.coords
    diag = two_start_coupling_diagnostic(cfg, np.sin(2 * np.pi * x), 3 * np.cos(2 * np.pi * x),
                                         150, 200, rng)
    assert diag.distances[-1] < 1e-6 * diag.distances[0]
