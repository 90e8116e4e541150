"""Declarative configuration: chain specs, experiment specs, YAML round-trip.

Configs are plain YAML mappings. Parsing is strict: unknown keys and
ill-typed values raise :class:`~deepgp.errors.ConfigError`.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .constructions import (Composition, Convolution, CovFunction, CovOperator,
                            DeepChainConfig)
from .errors import ConfigError
from .fields import Grid, SpectralCovariance
from .kernels import (ClampedExp, Exp, GaussianCorrelation, SquaredExponential,
                      Square)

# ---------------------------------------------------------------------------
# helpers


def _take(d: dict, allowed: set, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")
    return d


def _num(d: dict, key: str, where: str, default=None, positive=False, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{where}.{key}: must be positive")
    return int(v) if integer else float(v)


def _bool(d: dict, key: str, where: str, default: bool) -> bool:
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{where}.{key}: expected true/false, got {v!r}")
    return v


def _choice(d: dict, key: str, where: str, options, default=None) -> str:
    v = d.get(key, default)
    if v not in options:
        raise ConfigError(f"{where}.{key}: expected one of {list(options)}, got {v!r}")
    return v


# ---------------------------------------------------------------------------
# kernels, length-scale maps, spectra


def length_map_from_dict(d, where="F"):
    d = _take(d, {"form", "f_minus", "a", "b", "f_plus"}, where)
    form = _choice(d, "form", where, ("square", "exp", "clamped_exp"))
    if form == "clamped_exp":
        try:
            return ClampedExp(*(_num(d, k, where) for k in ("f_minus", "a", "b", "f_plus")))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if len(d) > 1:
        raise ConfigError(f"{where}: form {form!r} takes no parameters")
    return Square() if form == "square" else Exp()


def length_map_to_dict(F) -> dict:
    if isinstance(F, ClampedExp):
        return {"form": "clamped_exp", "f_minus": F.f_minus, "a": F.a, "b": F.b, "f_plus": F.f_plus}
    return {"form": "square" if isinstance(F, Square) else "exp"}


def kernel_from_dict(d, where="kernel"):
    d = _take(d, {"family", "sigma2", "w2"}, where)
    fam = _choice(d, "family", where, ("squared_exponential", "gaussian_correlation"))
    if fam == "gaussian_correlation":
        if len(d) > 1:
            raise ConfigError(f"{where}: gaussian_correlation takes no parameters")
        return GaussianCorrelation()
    return SquaredExponential(_num(d, "sigma2", where, positive=True),
                              _num(d, "w2", where, positive=True))


def kernel_to_dict(k) -> dict:
    if isinstance(k, SquaredExponential):
        return {"family": "squared_exponential", "sigma2": k.sigma2, "w2": k.w2}
    return {"family": "gaussian_correlation"}


SPECTRA = ("flat", "brownian_bridge", "neumann", "matern")


def spectrum_from_dict(d, where="cov"):
    d = _take(d, {"family", "K", "lam2", "alpha", "tau", "scale", "d"}, where)
    fam = _choice(d, "family", where, SPECTRA)
    K = _num(d, "K", where, positive=True, integer=True)
    dim = _num(d, "d", where, default=1, integer=True)
    if fam == "flat":
        return SpectralCovariance.flat(K, _num(d, "lam2", where, positive=True), dim), d
    if fam == "brownian_bridge":
        return SpectralCovariance.brownian_bridge(K), d
    if fam == "neumann":
        return SpectralCovariance.neumann(K), d
    return SpectralCovariance.matern(K, _num(d, "alpha", where, positive=True),
                                     _num(d, "tau", where, default=1.0),
                                     _num(d, "scale", where, default=1.0), dim), d


# ---------------------------------------------------------------------------
# chain configs


def chain_config_from_dict(d: dict) -> DeepChainConfig:
    """Build a :class:`DeepChainConfig` from its YAML mapping."""
    d = _take(d, {"construction", "grid", "depth", "seed"}, "chain")
    c = _take(d.get("construction"), {"kind", "kernel", "width", "connect_input", "F",
                                      "base", "alpha", "sigma", "base_gamma", "cov"},
              "construction")
    kind = _choice(c, "kind", "construction", ("composition", "covfun", "covop", "convolution"))
    g = _take(d.get("grid", {}), {"d", "n"}, "grid")
    dim = _num(g, "d", "grid", default=1, integer=True)
    n = _num(g, "n", "grid", positive=True, integer=True)
    if dim not in (1, 2):
        raise ConfigError("grid.d must be 1 or 2")
    try:
        if kind == "composition":
            variant = Composition(kernel_from_dict(c.get("kernel", {"family": "squared_exponential",
                                                                     "sigma2": 1.0, "w2": 1.0})),
                                  _num(c, "width", "construction", default=1, integer=True),
                                  _bool(c, "connect_input", "construction", False))
        elif kind == "covfun":
            variant = CovFunction(length_map_from_dict(c.get("F", {"form": "square"})),
                                  kernel_from_dict(c.get("base", {"family": "gaussian_correlation"})))
        elif kind == "covop":
            variant = CovOperator(length_map_from_dict(c.get("F")),
                                  _num(c, "alpha", "construction", default=4, integer=True),
                                  _num(c, "sigma", "construction", default=1.0, positive=True),
                                  _num(c, "base_gamma", "construction", default=20.0, positive=True))
        else:
            variant = Convolution(spectrum_from_dict(c.get("cov"))[0])
        return DeepChainConfig(variant, Grid(dim, n, periodic=(kind == "convolution")),
                               _num(d, "depth", "chain", default=1, integer=True),
                               _num(d, "seed", "chain", default=0, integer=True))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def dump_yaml(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False)


# ---------------------------------------------------------------------------
# experiment specs


@dataclass(frozen=True)
class MCMCSettings:
    """Sampler budget. ``samples`` counts every step including burn-in."""

    samples: int = 50_000
    burn_in: int = 10_000
    beta_init: float = 0.1
    adapt: bool = True
    thin: int = 1
    window: int = 50
    gibbs: bool = False


@dataclass(frozen=True)
class ConstructionSpec:
    """Prior hierarchy used for inference.

    ``sigma = None`` requests calibration from ``pilot`` stationary draws.
    """

    kind: str = "covop"
    F: dict = field(default_factory=lambda: {"form": "clamped_exp", "f_minus": 200.0,
                                             "a": 100.0, "b": 2.0, "f_plus": 22500.0})
    alpha: int = 4
    sigma: Optional[float] = None
    base_gamma: float = 20.0
    pilot: int = 1000
    base: dict = field(default_factory=lambda: {"family": "gaussian_correlation"})

    def length_map(self):
        return length_map_from_dict(self.F)

    def variant(self, sigma: Optional[float] = None):
        if self.kind == "covop":
            s = self.sigma if sigma is None else sigma
            return CovOperator(self.length_map(), self.alpha, 1.0 if s is None else s, self.base_gamma)
        return CovFunction(self.length_map(), kernel_from_dict(self.base))


TRUTHS = ("indicator1d", "trig2d", "file")
LAYOUTS = ("uniform", "random", "half_domain")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "experiment"
    construction: ConstructionSpec = ConstructionSpec()
    truth: str = "indicator1d"
    truth_path: Optional[str] = None
    d: int = 1
    generation_mesh: int = 200
    sampling_mesh: int = 100
    J: int = 50
    obs_layout: str = "uniform"
    noise_std: float = 0.02
    n_layers: int = 2
    observation: str = "nearest"
    mcmc: MCMCSettings = MCMCSettings()
    seed: int = 0
    allow_inverse_crime: bool = False

    def validate(self) -> "ExperimentSpec":
        if self.d not in (1, 2):
            raise ConfigError("d must be 1 or 2")
        if self.truth not in TRUTHS:
            raise ConfigError(f"truth must be one of {TRUTHS}")
        if self.truth == "file" and not self.truth_path:
            raise ConfigError("truth 'file' needs truth_path")
        if self.truth == "indicator1d" and self.d != 1 or self.truth == "trig2d" and self.d != 2:
            raise ConfigError(f"truth {self.truth!r} does not match d={self.d}")
        if self.obs_layout not in LAYOUTS:
            raise ConfigError(f"obs_layout must be one of {LAYOUTS}")
        if self.observation not in ("nearest", "linear"):
            raise ConfigError("observation must be 'nearest' or 'linear'")
        if self.construction.kind not in ("covop", "covfun"):
            raise ConfigError("construction.kind must be 'covop' or 'covfun'")
        if self.construction.kind == "covop" and (self.construction.alpha <= 0 or self.construction.alpha % 2):
            raise ConfigError("construction.alpha must be an even positive integer")
        if self.generation_mesh < 1 or self.sampling_mesh < 1 or self.J < 1:
            raise ConfigError("meshes and J must be positive")
        if self.generation_mesh < self.sampling_mesh or (
                self.generation_mesh == self.sampling_mesh and not self.allow_inverse_crime):
            raise ConfigError("generation_mesh must be strictly finer than sampling_mesh "
                              "(pass allow_inverse_crime to override equality)")
        if self.J > self.generation_mesh ** self.d:
            raise ConfigError("J exceeds the number of generation-mesh nodes")
        if not self.noise_std >= 0:
            raise ConfigError("noise_std must be non-negative")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be at least 1")
        m = self.mcmc
        if m.burn_in < 0 or m.samples < 0 or m.thin < 1 or m.window < 1:
            raise ConfigError("invalid mcmc budget")
        if self.n_layers > 1 and m.samples - m.burn_in <= 0:
            raise ConfigError("empty chain: no samples after burn-in")
        if not 0 < m.beta_init <= 1:
            raise ConfigError("mcmc.beta_init must lie in (0, 1]")
        try:
            self.construction.length_map()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        d = _take(dict(d), names, "spec")
        kw = dict(d)
        try:
            if "construction" in d:
                c = _take(d["construction"], {f.name for f in dataclasses.fields(ConstructionSpec)},
                          "construction")
                kw["construction"] = ConstructionSpec(**c)
            if "mcmc" in d:
                m = _take(d["mcmc"], {f.name for f in dataclasses.fields(MCMCSettings)}, "mcmc")
                kw["mcmc"] = MCMCSettings(**m)
            spec = cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        _check_types(spec)
        return spec.validate()

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(load_yaml(path))

    def dumps(self) -> str:
        return dump_yaml(self.to_dict())

    def spec_hash(self) -> str:
        return spec_hash(self.to_dict())

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)


def _check_types(spec: ExperimentSpec) -> None:
    ints = {"d", "generation_mesh", "sampling_mesh", "J", "n_layers", "seed"}
    for name in ints:
        v = getattr(spec, name)
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise ConfigError(f"{name} must be an integer, got {v!r}")
    for name in ("samples", "burn_in", "thin", "window"):
        v = getattr(spec.mcmc, name)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"mcmc.{name} must be an integer, got {v!r}")
    for name in ("adapt", "gibbs"):
        if not isinstance(getattr(spec.mcmc, name), bool):
            raise ConfigError(f"mcmc.{name} must be true/false")
    if not isinstance(spec.allow_inverse_crime, bool):
        raise ConfigError("allow_inverse_crime must be true/false")
    if isinstance(spec.noise_std, bool) or not isinstance(spec.noise_std, (int, float)):
        raise ConfigError("noise_std must be a number")


def spec_hash(d: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON encoding."""
    text = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
