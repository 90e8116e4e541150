"""Experiment definitions: truths, synthetic data, error metrics and reports."""
from __future__ import annotations

import concurrent.futures as cf
import csv
import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentSpec
from .errors import ConfigError
from .fields import Grid
from .inference import Dataset, InferenceResult, observation_operator, run_inference

# ---------------------------------------------------------------------------
# truths


def indicator_1d(x) -> np.ndarray:
    """``1`` on the open interval ``(0.3, 0.7)``, ``0`` elsewhere."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return ((x > 0.3) & (x < 0.7)).astype(float)


def _box(x, y, lo, hi):
    return (x > lo) & (x < hi) & (y > lo) & (y < hi)


def trig_2d(points) -> np.ndarray:
    """Smooth background plus localized oscillations of increasing frequency."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = p[:, 0], p[:, 1]
    tp = 2 * np.pi
    out = np.cos(tp * x) * np.cos(tp * y)
    out += np.sin(2 * tp * x) * np.sin(2 * tp * y) * _box(x, y, 0.25, 0.75)
    out += np.sin(4 * tp * x) * np.sin(4 * tp * y) * (
        (x > 0.5) & (x < 0.75) & (y > 0.5) & (y < 0.75))
    out += np.sin(8 * tp * x) * np.sin(8 * tp * y) * (
        (x > 0.25) & (x < 0.5) & (y > 0.25) & (y < 0.5))
    return out


def load_truth_file(path, grid: Grid) -> np.ndarray:
    """Values on ``grid`` from ``.npy`` or a one-column CSV (``#`` comments allowed)."""
    try:
        if str(path).endswith(".npy"):
            vals = np.load(path)
        else:
            vals = np.loadtxt(path, delimiter=",", comments="#", ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read truth file {path}: {exc}") from None
    vals = np.asarray(vals, dtype=float).reshape(-1)
    if vals.size != grid.size:
        raise ConfigError(f"truth file has {vals.size} values, generation mesh has {grid.size}")
    return vals


def truth_on(spec: ExperimentSpec, grid: Grid) -> np.ndarray:
    """Truth at the nodes of ``grid``.

    File truths live on the generation mesh and are restricted to other
    grids by taking the generation node of the containing cell.
    """
    if spec.truth == "indicator1d":
        return indicator_1d(grid.points[:, 0])
    if spec.truth == "trig2d":
        return trig_2d(grid.points)
    gen = Grid(spec.d, spec.generation_mesh)
    vals = load_truth_file(spec.truth_path, gen)
    if grid == gen:
        return vals
    return observation_operator(gen, grid.points, "nearest") @ vals


# ---------------------------------------------------------------------------
# data


def observation_points(spec: ExperimentSpec, rng) -> np.ndarray:
    """Observation locations for the configured layout, shape ``(J, d)``.

    ``uniform`` uses cell centres ``(k - 1/2) / J`` in one dimension and
    the interior nodes ``k / (s + 1)`` of an ``s x s`` lattice in two
    (``J = s**2``); ``random`` draws i.i.d. uniform points; ``half_domain``
    is the uniform layout squeezed into ``x_1 < 1/2``.
    """
    J, d = spec.J, spec.d
    if spec.obs_layout == "random":
        return rng.random((J, d))
    if d == 1:
        pts = ((np.arange(J) + 0.5) / J)[:, None]
    else:
        s = int(round(np.sqrt(J)))
        if s * s != J:
            raise ConfigError("two-dimensional uniform layouts need J to be a perfect square")
        c = np.arange(1, s + 1) / (s + 1)
        gx, gy = np.meshgrid(c, c, indexing="ij")
        pts = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    if spec.obs_layout == "half_domain":
        pts = pts.copy()
        pts[:, 0] *= 0.5
    return pts


def layout_description(spec: ExperimentSpec) -> str:
    """Observation placement as recorded in output metadata."""
    if spec.obs_layout == "random":
        return "i.i.d. uniform in the unit cube"
    where = ("cell centres (k - 1/2) / J" if spec.d == 1
             else "interior lattice nodes k / (s + 1), J = s^2")
    return where + (", first coordinate halved" if spec.obs_layout == "half_domain" else "")


def generate_data(spec: ExperimentSpec, rng):
    """Synthetic observations of the truth.

    The truth is evaluated on the generation mesh and observed at the node of
    the cell containing each observation point; ``N(0, noise_std**2)``
    noise is added. Returns the dataset and the truth on the sampling mesh.
    """
    spec.validate()
    gen = Grid(spec.d, spec.generation_mesh)
    if spec.J > gen.size:
        raise ConfigError("J exceeds the number of generation-mesh nodes")
    pts = observation_points(spec, rng)
    values = observation_operator(gen, pts, "nearest") @ truth_on(spec, gen)
    y = values + spec.noise_std * rng.standard_normal(spec.J)
    # a zero noise level still needs a positive likelihood scale downstream
    dataset = Dataset(pts, y, spec.noise_std if spec.noise_std > 0 else 1e-12)
    return dataset, truth_on(spec, Grid(spec.d, spec.sampling_mesh))


# ---------------------------------------------------------------------------
# errors


def compute_error(mean, truth, norm: str = "L1") -> float:
    """Midpoint-rule ``L1`` or ``L2`` distance on a uniform grid of the unit cube."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if mean.shape != truth.shape:
        raise ValueError(f"mesh mismatch: {mean.size} vs {truth.size} nodes")
    diff = np.abs(mean - truth)
    if norm == "L1":
        return float(diff.mean())
    if norm == "L2":
        return float(np.sqrt(np.mean(diff ** 2)))
    raise ValueError(f"unknown norm {norm!r}")


# ---------------------------------------------------------------------------
# persistence


def artifact_header(spec_hash: str, seed) -> str:
    return f"spec_hash={spec_hash} seed={seed}"


def write_inference_outputs(result: InferenceResult, outdir, stem: str = "summary") -> list:
    """Summary JSON and CSV plus dataset and truth CSVs; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    s = result.summary
    head = artifact_header(s.meta["spec_hash"], s.meta["seed"])
    paths = [os.path.join(outdir, f"{stem}.json"), os.path.join(outdir, f"{stem}.csv"),
             os.path.join(outdir, "data.csv")]
    s.to_json(paths[0])
    s.to_csv(paths[1], head)
    ds = result.dataset
    with open(paths[2], "w") as fh:
        fh.write(f"# {head}\n")
        names = ["x", "y"][: ds.obs_points.shape[1]]
        fh.write(",".join(names + ["obs"]) + "\n")
        for p, v in zip(ds.obs_points, ds.y):
            fh.write(",".join(repr(float(t)) for t in list(p) + [v]) + "\n")
    if result.truth is not None:
        paths.append(os.path.join(outdir, "truth.csv"))
        with open(paths[-1], "w") as fh:
            fh.write(f"# {head}\n")
            names = ["x", "y"][: s.points.shape[1]]
            fh.write(",".join(names + ["truth"]) + "\n")
            for p, v in zip(s.points, result.truth):
                fh.write(",".join(repr(float(t)) for t in list(p) + [v]) + "\n")
    return paths


# ---------------------------------------------------------------------------
# reports


@dataclass
class ErrorReport:
    """Errors of posterior means, indexed by ``(J, n_layers)``."""

    norm: str
    rows: dict
    layers: list
    meta: dict

    def to_markdown(self) -> str:
        cols = " & ".join(f"{n} layer{'s' if n > 1 else ''}" for n in self.layers)
        lines = [f"| J | {' | '.join(c.strip() for c in cols.split('&'))} |",
                 "|---|" + "---|" * len(self.layers)]
        for J in sorted(self.rows):
            cells = [f"{self.rows[J][n]:.4f}" if n in self.rows[J] else "-" for n in self.layers]
            lines.append(f"| {J} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"norm": self.norm, "layers": self.layers, "meta": self.meta,
                "rows": {str(J): {str(n): v for n, v in sorted(r.items())}
                         for J, r in sorted(self.rows.items())}}

    def to_csv(self, path, header: str = "") -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["J"] + [f"layers_{n}" for n in self.layers])
            for J in sorted(self.rows):
                w.writerow([J] + [repr(self.rows[J][n]) if n in self.rows[J] else ""
                                  for n in self.layers])


def build_report(summaries: Sequence[dict], norm: str = "L1") -> ErrorReport:
    """Assemble summary dictionaries into a ``J`` by ``n_layers`` table.

    Refuses summaries whose noise level or truth differ.
    """
    if not summaries:
        raise ValueError("no summaries to aggregate")
    ref = summaries[0]["meta"]
    rows, layers = {}, set()
    for s in summaries:
        m = s["meta"]
        for key in ("noise_std", "truth"):
            if m.get(key) != ref.get(key):
                raise ConfigError(f"cannot aggregate runs with different {key}: "
                                  f"{m.get(key)!r} vs {ref.get(key)!r}")
        if norm not in s.get("errors", {}):
            raise ConfigError(f"summary {m.get('name')!r} has no {norm} error")
        rows.setdefault(int(m["J"]), {})[int(m["n_layers"])] = float(s["errors"][norm])
        layers.add(int(m["n_layers"]))
    meta = {"noise_std": ref.get("noise_std"), "truth": ref.get("truth"),
            "spec_hashes": sorted({s["meta"]["spec_hash"] for s in summaries})}
    return ErrorReport(norm, rows, sorted(layers), meta)


def cell_seed(master: int, index: int) -> int:
    """Seed of one report cell, derived from the master seed and cell index."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def _run_cell(spec_dict: dict) -> dict:
    spec = ExperimentSpec.from_dict(spec_dict)
    return run_inference(spec).summary.to_dict()


def run_report(base: ExperimentSpec, Js: Sequence[int], layers: Sequence[int],
               workers: int = 1, master_seed: Optional[int] = None) -> list:
    """Run every ``(J, n_layers)`` cell; returns the summary dictionaries in cell order."""
    master = base.seed if master_seed is None else master_seed
    specs = []
    for idx, (J, n) in enumerate((J, n) for J in Js for n in layers):
        s = base.replace(J=int(J), n_layers=int(n), seed=cell_seed(master, idx),
                         name=f"{base.name}_J{J}_N{n}")
        specs.append(s.validate().to_dict())
    if workers <= 1:
        return [_run_cell(s) for s in specs]
    with cf.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, specs))


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")
