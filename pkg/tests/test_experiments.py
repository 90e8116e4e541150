import numpy as np
import pytest

from deepgp.config import ExperimentSpec, MCMCSettings
from deepgp.errors import ConfigError
from deepgp.experiments import (build_report, cell_seed, compute_error, generate_data,
                                indicator_1d, observation_points, trig_2d, truth_on)
from deepgp.fields import Grid


def test_indicator_values():
    x = np.array([0.0, 0.3, 0.31, 0.5, 0.69, 0.7, 1.0])
    assert indicator_1d(x).tolist() == [0, 0, 1, 1, 1, 0, 0]


def test_trig_values():
    assert trig_2d([[0.5, 0.5]])[0] == pytest.approx(1.0, abs=1e-12)
    assert trig_2d([[0.0, 0.0]])[0] == pytest.approx(1.0)
    # outside all boxes only the background remains
    assert trig_2d([[0.1, 0.9]])[0] == pytest.approx(np.cos(0.2 * np.pi) * np.cos(1.8 * np.pi))


def test_uniform_layouts():
    spec = ExperimentSpec(J=4)
    assert observation_points(spec, None)[:, 0].tolist() == [0.125, 0.375, 0.625, 0.875]
    two = ExperimentSpec(truth="trig2d", d=2, J=9, generation_mesh=20, sampling_mesh=10)
    pts2 = observation_points(two, None)
    assert pts2.shape == (9, 2) and sorted(set(pts2[:, 0])) == [0.25, 0.5, 0.75]
    with pytest.raises(ConfigError):
        observation_points(two.replace(J=8), None)
    half = observation_points(spec.replace(obs_layout="half_domain"), None)
    assert np.all(half < 0.5)


def test_noise_free_data_is_truth_on_generation_mesh(rng):
    spec = ExperimentSpec(J=50, noise_std=0.0, generation_mesh=200, sampling_mesh=100)
    ds, truth = generate_data(spec, rng)
    assert np.array_equal(ds.y, indicator_1d(ds.obs_points[:, 0]))
    assert truth.size == 100


def test_noisy_data_residual_scale(rng):
    spec = ExperimentSpec(J=2000, noise_std=0.1, generation_mesh=4000, sampling_mesh=100)
    ds, _ = generate_data(spec, rng)
    r = ds.y - indicator_1d(ds.obs_points[:, 0])
    assert abs(r.std() - 0.1) < 0.01


def test_compute_error_cases():
    assert compute_error(np.ones(10), np.ones(10)) == 0.0
    assert compute_error(np.ones(10), np.zeros(10), "L1") == 1.0
    assert compute_error(np.full(4, 2.0), np.zeros(4), "L2") == 2.0
    with pytest.raises(ValueError):
        compute_error(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        compute_error(np.ones(3), np.ones(3), "Linf")


def test_compute_error_converges_to_integral():
    # midpoint rule is second order: int_0^1 sin(pi x) dx = 2 / pi, int sin^2 = 1 / 2
    errs = []
    for n in (10, 100, 1000):
        x = Grid(1, n).coords
        m = np.sin(np.pi * x)
        errs.append(abs(compute_error(m, np.zeros(n), "L1") - 2 / np.pi))
        assert compute_error(m, np.zeros(n), "L2") == pytest.approx(np.sqrt(0.5), rel=1e-12)
    assert errs[0] / errs[1] == pytest.approx(100, rel=0.01)
    assert errs[2] < 1e-6


def test_config_roundtrip():
    spec = ExperimentSpec(name="rt", J=25, n_layers=3, seed=9,
                          mcmc=MCMCSettings(samples=300, burn_in=100))
    back = ExperimentSpec.from_dict(spec.to_dict())
    assert back == spec and back.spec_hash() == spec.spec_hash()
    assert spec.replace(seed=10).spec_hash() != spec.spec_hash()


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"J": "ten"})
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"unknown_key": 1})
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"truth": "trig2d"})
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"construction": {"alpha": 3}})


def test_inverse_crime_guard():
    with pytest.raises(ConfigError, match="inverse_crime"):
        ExperimentSpec(generation_mesh=100, sampling_mesh=100).validate()
    ExperimentSpec(generation_mesh=100, sampling_mesh=100, allow_inverse_crime=True).validate()
    with pytest.raises(ConfigError):
        ExperimentSpec(generation_mesh=50, sampling_mesh=100, allow_inverse_crime=True).validate()


def test_file_truth_restricted_to_sampling_mesh(tmp_path):
    gen = Grid(1, 40)
    path = tmp_path / "truth.csv"
    np.savetxt(path, gen.coords, delimiter=",", header="values")
    spec = ExperimentSpec(truth="file", truth_path=str(path), generation_mesh=40, sampling_mesh=20)
    t = truth_on(spec, Grid(1, 20))
    assert t.size == 20 and np.allclose(t, gen.coords[1::2])
    np.savetxt(path, np.ones(7))
    with pytest.raises(ConfigError):
        truth_on(spec, Grid(1, 20))


def _summary(J, n, err, noise=0.02, truth="indicator1d"):
    return {"meta": {"J": J, "n_layers": n, "noise_std": noise, "truth": truth,
                     "spec_hash": f"h{J}{n}", "name": "x"}, "errors": {"L1": err}}


def test_report_table_and_guards():
    rep = build_report([_summary(50, 1, 0.05), _summary(50, 2, 0.03), _summary(100, 1, 0.04)])
    assert rep.rows == {50: {1: 0.05, 2: 0.03}, 100: {1: 0.04}}
    md = rep.to_markdown()
    assert "| 50 | 0.0500 | 0.0300 |" in md and "| 100 | 0.0400 | - |" in md
    with pytest.raises(ConfigError):
        build_report([_summary(50, 1, 0.05), _summary(50, 2, 0.03, noise=0.1)])
    with pytest.raises(ConfigError):
        build_report([_summary(50, 1, 0.05), _summary(50, 2, 0.03, truth="trig2d")])
    with pytest.raises(ConfigError):
        build_report([_summary(50, 1, 0.05)], norm="L2")


def test_cell_seeds_distinct_and_stable():
    seeds = [cell_seed(0, i) for i in range(20)]
    assert len(set(seeds)) == 20
    assert seeds == [cell_seed(0, i) for i in range(20)]
