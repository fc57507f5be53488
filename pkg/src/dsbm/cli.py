"""Command-line entry point: ``dsbm {generate,sweep,heatmap,spectrum,score}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import RunConfig, SpectrumConfig, dump_spectrum, run_heatmap, run_sweep
from .bp import BpOptions, run_bp
from .generate import build_spatiotemporal_graph, generate
from .io import read_labels, read_network, write_labels, write_network
from .metrics import overlap, snapshot_overlap
from .model import ModelParams
from .spectral import spectral_cluster


class ConfigError(Exception):
    pass


def _floats(s: str) -> list:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def _model_args(p, defaults):
    p.add_argument("--n", type=int, default=defaults.get("n"))
    p.add_argument("--T", type=int, default=defaults.get("T"))
    p.add_argument("--k", type=int, default=defaults.get("k"))
    p.add_argument("--c", type=float, default=defaults.get("c"))
    p.add_argument("--prior", type=_floats, default=None)


def _grid_args(p):
    p.add_argument("--config", type=Path, help="JSON file with RunConfig fields; flags override it")
    _model_args(p, {})
    p.add_argument("--epsilons", type=_floats)
    p.add_argument("--etas", type=_floats)
    p.add_argument("--replicates", type=int)
    p.add_argument("--algorithm", choices=["bp", "spectral", "both"])
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--damping", type=float)
    p.add_argument("--out-dir", type=str)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsbm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample one dynamic network to a file")
    _model_args(g, {"n": 512, "T": 40, "k": 2, "c": 16.0})
    g.add_argument("--epsilon", type=float, required=True)
    g.add_argument("--eta", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)

    for name, helptext in (("sweep", "overlap versus epsilon for each eta"),
                           ("heatmap", "overlap over the (epsilon, eta) plane")):
        _grid_args(sub.add_parser(name, help=helptext))

    s = sub.add_parser("spectrum", help="full spectrum of B' for one instance")
    for f, default in (("n", 300), ("T", 5), ("k", 2)):
        s.add_argument(f"--{f}", type=int, default=default)
    s.add_argument("--c", type=float, default=3.0)
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--eta", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--limit", type=int, default=8000)
    s.add_argument("--out-dir", type=str, required=True)

    sc = sub.add_parser("score", help="infer or load labels for a network file and report the overlap")
    sc.add_argument("network", type=Path)
    sc.add_argument("--labels", type=Path, help="inferred labels as 'i t g' lines")
    sc.add_argument("--algorithm", choices=["bp", "spectral"], default="bp")
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--save-labels", type=Path)
    return ap


def _run_config(args) -> RunConfig:
    base = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {args.config}: {err}")
    for key in ("n", "T", "k", "c", "epsilons", "etas", "replicates", "algorithm",
                "seed", "workers", "out_dir"):
        val = getattr(args, key)
        if val is not None:
            base[key] = val
    if args.prior is not None:
        base["prior"] = args.prior
    bp = dict(base.get("bp", {}))
    for key in ("max_iters", "tol", "damping"):
        val = getattr(args, key)
        if val is not None:
            bp[key] = val
    base["bp"] = bp
    if "epsilons" not in base or "etas" not in base:
        raise ConfigError("both --epsilons and --etas (or config entries) are required")
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err))


def _cmd_generate(args):
    try:
        params = ModelParams(n=args.n, T=args.T, k=args.k, eta=args.eta, c=args.c,
                             epsilon=args.epsilon, prior=args.prior)
        params.pmat
    except ValueError as err:
        raise ConfigError(str(err))
    net = generate(params, args.seed)
    write_network(net, args.out)
    print(json.dumps({"out": str(args.out), "edges": net.n_edges}))


def _cmd_grid(args, fn):
    config = _run_config(args)
    res = fn(config)
    print(json.dumps({"transitions": res.summary["transitions"], "theory": res.summary["theory"],
                      "rows": len(res.rows)}, indent=2))


def _cmd_spectrum(args):
    try:
        cfg = SpectrumConfig(n=args.n, T=args.T, k=args.k, c=args.c, epsilon=args.epsilon,
                             eta=args.eta, seed=args.seed, limit=args.limit, out_dir=args.out_dir)
        params = cfg.params()
        if 4 * params.n * params.T > cfg.limit:
            raise ValueError(f"operator dimension {4 * params.n * params.T} exceeds limit {cfg.limit}")
    except ValueError as err:
        raise ConfigError(str(err))
    rep = dump_spectrum(cfg)
    print(json.dumps({"bulk_radius": rep.bulk_radius,
                      "real_outliers": [float(x) for x in rep.real_outliers]}))


def _cmd_score(args):
    try:
        net = read_network(args.network)
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot read network: {err}")
    p = net.params
    if args.labels is not None:
        labels = read_labels(args.labels, p.n, p.T)
        info = {"source": str(args.labels)}
    else:
        graph = build_spatiotemporal_graph(net)
        if args.algorithm == "bp":
            res = run_bp(graph, p, BpOptions(), seed=args.seed)
            labels = res.partition
            info = {"converged": res.converged, "iterations": res.iterations}
        else:
            part = spectral_cluster(graph, p, seed=args.seed)
            if not part.found:
                print(json.dumps({"found": False}))
                return
            labels = part.labels
            info = {"eigenvalues": [z.real for z in part.eigenvalues]}
    if args.save_labels is not None:
        write_labels(labels, p.n, args.save_labels)
    if net.trajectory is not None:
        truth = net.trajectory.flat()
        rep = overlap(truth, labels, p.k)
        info.update(overlap=rep.overlap, raw_agreement=rep.raw_agreement,
                    snapshot_overlap=snapshot_overlap(truth, labels, p.k, p.n).overlap)
    print(json.dumps(info))


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            _cmd_generate(args)
        elif args.command == "sweep":
            _cmd_grid(args, run_sweep)
        elif args.command == "heatmap":
            _cmd_grid(args, run_heatmap)
        elif args.command == "spectrum":
            _cmd_spectrum(args)
        elif args.command == "score":
            _cmd_score(args)
    except ConfigError as err:
        print(f"dsbm: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
