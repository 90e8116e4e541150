"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ergodicity as erg
from .config import ExperimentSpec, chain_config_from_dict, load_yaml, spec_hash
from .constructions import Composition, run_chain
from .errors import ConfigError, NumericalError
from .experiments import (artifact_header, build_report, run_report,
                          write_inference_outputs, write_json)
from .inference import run_inference
from .plotting import plot_csv

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_chain(path, seed=None, depth=None):
    raw = load_yaml(path)
    if seed is not None:
        raw["seed"] = seed
    if depth is not None:
        raw["depth"] = depth
    return chain_config_from_dict(raw), raw


def _write_rows(path, header, names, rows):
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else repr(v) for v in row) + "\n")


def _layer_rows(u, points):
    u = np.asarray(u)
    u2 = u.reshape(u.shape[0], -1)
    width = u2.shape[1]
    cplx = np.iscomplexobj(u2)
    names = ["node"] + ["x", "y"][: points.shape[1]]
    vnames = ["value"] if width == 1 else [f"value_{j}" for j in range(width)]
    names += [f"{v}_{p}" for v in vnames for p in ("re", "im")] if cplx else vnames
    rows = []
    for i in range(u2.shape[0]):
        vals = []
        for v in u2[i]:
            vals += [float(v.real), float(v.imag)] if cplx else [float(v)]
        rows.append([i] + [float(c) for c in points[i]] + vals)
    return names, rows


def cmd_sample_prior(args):
    cfg, raw = _load_chain(args.config, args.seed, args.depth)
    h = spec_hash(raw)
    traj = run_chain(cfg)
    os.makedirs(args.out, exist_ok=True)
    head = artifact_header(h, cfg.seed)
    files = []
    for n, u in enumerate(traj.layers):
        name = f"layer_{n:02d}.csv"
        _write_rows(os.path.join(args.out, name), head, *_layer_rows(u, cfg.grid.points))
        files.append(name)
    if args.npz:
        traj.to_npz(os.path.join(args.out, "trajectory.npz"))
    write_json(os.path.join(args.out, "manifest.json"),
               {"spec_hash": h, "seed": cfg.seed, "depth": cfg.depth, "layers": files,
                "norms": [float(v) for v in traj.norms],
                "max_spreads": [float(v) for v in traj.spreads], "config": raw})
    return 0


def cmd_diagnose(args):
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    kind = args.kind
    raw = {}
    if kind in ("spread", "norms", "coupling"):
        if not args.config:
            raise ConfigError(f"diagnose --kind {kind} needs --config")
        cfg, raw = _load_chain(args.config, args.seed, args.depth)
    h = spec_hash({"kind": kind, "config": raw, "replicas": args.replicas,
                   "lambda2": args.lambda2, "steps": args.steps})
    head = artifact_header(h, args.seed)
    report = {"spec_hash": h, "seed": args.seed, "kind": kind}
    series_path = os.path.join(args.out, "series.csv")
    if kind == "spread":
        if not isinstance(cfg.variant, Composition):
            raise ConfigError("spread diagnostics need the composition construction")
        ens = [run_chain(cfg, rng=rng).stacked() for _ in range(args.replicas)]
        res = erg.fit_spread_decay(np.stack(ens), cfg.variant.kernel, cfg.variant.connect_input,
                                   cfg.grid.points, rng=rng, min_replicas=min(100, args.replicas))
        report["result"] = res.to_dict()
        cond = res.conditional_mean_square
        _write_rows(series_path, head, ["layer", "mean_square", "conditional_mean_square", "max_spread"],
                    [[n, float(res.mean_square[n]), float(cond[n]) if cond is not None else "",
                      float(res.max_spread[n])] for n in range(res.mean_square.size)])
    elif kind == "modes":
        rows, verdicts = [], []
        for lam2 in args.lambda2:
            logs = erg.simulate_mode_chain(lam2, args.steps, rng, args.replicas)
            v = [erg.mode_classifier(t, lam2, log_modulus=True, min_length=min(1000, args.steps))
                 for t in logs]
            counts = {k: sum(x.verdict == k for x in v) for k in ("decay", "diverge", "indeterminate")}
            verdicts.append({"lambda2": lam2, **counts,
                             "mean_lyapunov": float(np.mean([x.lyapunov for x in v]))})
            rows.append([lam2] + [counts[k] / args.replicas for k in ("decay", "diverge", "indeterminate")])
        report["threshold"] = erg.MODE_THRESHOLD
        report["result"] = verdicts
        _write_rows(series_path, head, ["lambda2", "decay", "diverge", "indeterminate"], rows)
    elif kind == "lyapunov":
        est = erg.lyapunov_constant_estimate(args.steps, rng)
        report["result"] = est.__dict__
        _write_rows(series_path, head, ["n", "estimate", "se", "reference"],
                    [[est.n, est.estimate, est.se, est.reference]])
    elif kind == "norms":
        tr = erg.norm_trace(run_chain(cfg, rng=rng))
        report["result"] = {"final_running_mean": float(tr.running_mean[-1]),
                            "relative_change_last_half": tr.relative_change(0.5)}
        _write_rows(series_path, head, ["layer", "norm", "running_mean"],
                    [[n, float(a), float(b)] for n, (a, b) in enumerate(zip(tr.norms, tr.running_mean))])
    elif kind == "coupling":
        n = cfg.grid.size
        width = cfg.variant.width if isinstance(cfg.variant, Composition) else 1
        shape = (n, width) if isinstance(cfg.variant, Composition) else (n,)
        diag = erg.two_start_coupling_diagnostic(cfg, np.zeros(shape), np.full(shape, args.offset),
                                                 cfg.depth, args.replicas, rng,
                                                 min_replicas=min(200, args.replicas))
        report["result"] = {"distances": diag.distances.tolist(), "offset": args.offset}
        _write_rows(series_path, head, ["layer", "energy_distance"],
                    [[k, float(v)] for k, v in enumerate(diag.distances)])
    write_json(os.path.join(args.out, "report.json"), report)
    return 0


def _load_spec(path, seed=None, allow=False):
    raw = load_yaml(path)
    if seed is not None:
        raw["seed"] = seed
    if allow:
        raw["allow_inverse_crime"] = True
    return ExperimentSpec.from_dict(raw)


def cmd_infer(args):
    spec = _load_spec(args.spec, args.seed, args.allow_inverse_crime)
    res = run_inference(spec, checkpoint_path=args.checkpoint, checkpoint_every=args.checkpoint_every,
                        resume=args.resume, max_steps=args.max_steps)
    if res.summary is None:
        print(f"stopped after {len(res.record.potentials)} steps; checkpoint {args.checkpoint}")
        return 0
    paths = write_inference_outputs(res, args.out)
    print("\n".join(paths))
    if res.summary.errors:
        print(json.dumps(res.summary.errors, sort_keys=True))
    return 0


def cmd_report(args):
    if args.from_files:
        summaries = []
        for p in args.from_files:
            with open(p) as fh:
                summaries.append(json.load(fh))
    else:
        if not args.spec:
            raise ConfigError("report needs --spec or --from")
        spec = _load_spec(args.spec, args.seed, args.allow_inverse_crime)
        summaries = run_report(spec, args.J, args.layers, args.workers)
    rep = build_report(summaries, args.norm)
    os.makedirs(args.out, exist_ok=True)
    head = artifact_header(",".join(rep.meta["spec_hashes"]), args.seed)
    with open(os.path.join(args.out, "table.md"), "w") as fh:
        fh.write(rep.to_markdown())
    rep.to_csv(os.path.join(args.out, "table.csv"), head)
    write_json(os.path.join(args.out, "table.json"), rep.to_dict())
    if not args.from_files:
        for s in summaries:
            write_json(os.path.join(args.out, f"{s['meta']['name']}.json"), s)
    print(rep.to_markdown(), end="")
    return 0


def cmd_plot(args):
    kind = plot_csv(args.csv, args.out, args.kind, args.title)
    print(f"{args.out} ({kind})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepgp", description="Deep Gaussian process toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample-prior", help="sample one deep-GP chain and write its layers")
    s.add_argument("--config", required=True)
    s.add_argument("--depth", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="prior_out")
    s.add_argument("--npz", action="store_true", help="also write the binary trajectory")
    s.set_defaults(func=cmd_sample_prior)

    s = sub.add_parser("diagnose", help="ergodicity diagnostics")
    s.add_argument("--kind", required=True, choices=["spread", "modes", "lyapunov", "norms", "coupling"])
    s.add_argument("--config")
    s.add_argument("--depth", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--replicas", type=int, default=200)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--lambda2", type=float, nargs="+", default=[1.5, 2.0, 5.0])
    s.add_argument("--offset", type=float, default=5.0, help="second start value for coupling")
    s.add_argument("--out", default="diagnose_out")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("infer", help="posterior sampling for one experiment spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="infer_out")
    s.add_argument("--allow-inverse-crime", action="store_true")
    s.add_argument("--checkpoint")
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--resume", action="store_true")
    s.add_argument("--max-steps", type=int)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("report", help="error table over observation counts and depths")
    s.add_argument("--spec")
    s.add_argument("--J", type=int, nargs="+", default=[25, 50, 100])
    s.add_argument("--layers", type=int, nargs="+", default=[1, 2, 3, 4])
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--norm", choices=["L1", "L2"], default="L1")
    s.add_argument("--from", dest="from_files", nargs="+", help="aggregate existing summary JSONs")
    s.add_argument("--allow-inverse-crime", action="store_true")
    s.add_argument("--out", default="report_out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("plot", help="render a CSV output as SVG")
    s.add_argument("--csv", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kind", default="auto", choices=["auto", "line", "band", "heatmap", "layers"])
    s.add_argument("--title", default="")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
