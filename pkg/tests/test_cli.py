import json
import os
import subprocess
import sys

import pytest

from deepgp.cli import main

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

SMALL_SPEC = """\
name: small
construction: {kind: covfun, F: {form: exp}}
truth: indicator1d
generation_mesh: 40
sampling_mesh: 20
J: 6
noise_std: 0.1
n_layers: 2
mcmc: {samples: 80, burn_in: 40, window: 20}
seed: 1
"""


def _files(path):
    out = {}
    for root, _, names in os.walk(path):
        for n in names:
            p = os.path.join(root, n)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, path)] = fh.read()
    return out


def _twice(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    fa, fb = _files(a), _files(b)
    assert fa and fa == fb
    return a, fa


@pytest.fixture
def small_spec(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL_SPEC)
    return str(p)


def test_sample_prior_contract(tmp_path):
    out, files = _twice(tmp_path, ["sample-prior", "--config", os.path.join(CONFIGS, "covfun_1d.yaml"),
                                    "--seed", "0", "--depth", "6"])
    csvs = sorted(f for f in files if f.endswith(".csv"))
    assert csvs == [f"layer_{n:02d}.csv" for n in range(7)]
    man = json.loads(files["manifest.json"])
    assert man["depth"] == 6 and man["seed"] == 0 and len(man["norms"]) == 7
    head = files["layer_00.csv"].decode().splitlines()
    assert head[0] == f"# spec_hash={man['spec_hash']} seed=0"
    assert head[1] == "node,x,value" and len(head) == 2 + 257


def test_sample_prior_seed_changes_output(tmp_path):
    cfg = os.path.join(CONFIGS, "covfun_1d.yaml")
    assert main(["sample-prior", "--config", cfg, "--seed", "0", "--depth", "2", "--out", str(tmp_path / "a")]) == 0
    assert main(["sample-prior", "--config", cfg, "--seed", "1", "--depth", "2", "--out", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a")["layer_02.csv"] != _files(tmp_path / "b")["layer_02.csv"]


@pytest.mark.parametrize("argv", [
    ["diagnose", "--kind", "lyapunov", "--steps", "10000", "--seed", "2"],
    ["diagnose", "--kind", "modes", "--steps", "1000", "--replicas", "20", "--seed", "2"],
    ["diagnose", "--kind", "norms", "--config", os.path.join(CONFIGS, "covfun_1d.yaml"), "--depth", "4"],
])
def test_diagnose_deterministic(tmp_path, argv):
    _, files = _twice(tmp_path, argv)
    assert set(files) == {"series.csv", "report.json"}


def test_infer_and_report_deterministic(tmp_path, small_spec):
    out, files = _twice(tmp_path / "i", ["infer", "--spec", small_spec])
    assert {"summary.json", "summary.csv", "data.csv", "truth.csv"} <= set(files)
    summary = json.loads(files["summary.json"])
    assert summary["quantile_bands"] == "pointwise" and set(summary["errors"]) == {"L1", "L2"}
    rep, rfiles = _twice(tmp_path / "r", ["report", "--from", str(out / "summary.json")])
    assert "table.md" in rfiles and "table.csv" in rfiles


def test_report_from_spec(tmp_path, small_spec):
    _, files = _twice(tmp_path, ["report", "--spec", small_spec, "--J", "4", "6", "--layers", "1", "2"])
    table = json.loads(files["table.json"])
    assert set(table["rows"]) == {"4", "6"} and table["layers"] == [1, 2]


def test_plot_deterministic(tmp_path, small_spec):
    assert main(["infer", "--spec", small_spec, "--out", str(tmp_path / "i")]) == 0
    csv = str(tmp_path / "i" / "summary.csv")
    assert main(["plot", "--csv", csv, "--out", str(tmp_path / "a.svg")]) == 0
    assert main(["plot", "--csv", csv, "--out", str(tmp_path / "b.svg")]) == 0
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_exit_code_config_error(tmp_path, small_spec):
    bad = tmp_path / "bad.yaml"
    bad.write_text(SMALL_SPEC.replace("sampling_mesh: 20", "sampling_mesh: 40"))
    assert main(["infer", "--spec", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["infer", "--spec", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("construction: {kind: nope}\ngrid: {n: 4}\n")
    assert main(["sample-prior", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_exit_code_numerical_failure(tmp_path):
    cfg = tmp_path / "overflow.yaml"
    cfg.write_text("construction: {kind: covop, F: {form: exp}, alpha: 2, sigma: 1.0e+4}\n"
                   "grid: {d: 1, n: 16}\ndepth: 3\n")
    assert main(["sample-prior", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "deepgp.cli", "diagnose", "--kind", "lyapunov",
                        "--steps", "10000", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "report.json").exists()
