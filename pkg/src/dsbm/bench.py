"""Parameter sweeps over (epsilon, eta) for BP and spectral clustering.

Each (epsilon index, eta index, replicate) is an independent work item whose
seed is ``derive_seed(base_seed, ei, hi, rep)``, so results do not depend on
the worker count or on execution order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bp import BpOptions, run_bp
from .generate import build_spatiotemporal_graph, derive_seed, generate
from .io import write_spectrum
from .metrics import overlap, snapshot_overlap
from .model import ModelParams, critical_epsilon
from .spectral import (ARPACK_MAX_RESTARTS, ARPACK_TOL, build_operator, full_spectrum,
                       spectral_cluster)

log = logging.getLogger(__name__)

ALGORITHMS = ("bp", "spectral")
TRANSITION_LEVEL = 0.05  # an overlap above this counts as detected


@dataclass
class EigenOptions:
    pairs: int | None = None  # real eigenpairs to extract; default covers T ferromagnetic harmonics
    tol: float = ARPACK_TOL
    max_iters: int | None = ARPACK_MAX_RESTARTS  # None: run Arnoldi to full convergence


@dataclass
class RunConfig:
    epsilons: list
    etas: list
    n: int = 512
    T: int = 40
    k: int = 2
    c: float = 16.0
    prior: tuple | None = None
    replicates: int = 10
    algorithm: str = "bp"  # bp | spectral | both
    bp: BpOptions = field(default_factory=BpOptions)
    eig: EigenOptions = field(default_factory=EigenOptions)
    seed: int = 0
    out_dir: str | None = None
    workers: int | None = None  # default from DSBM_WORKERS, else 1

    def __post_init__(self):
        self.epsilons = [float(x) for x in self.epsilons]
        self.etas = [float(x) for x in self.etas]
        if not self.epsilons or not self.etas:
            raise ValueError("epsilon and eta grids must be nonempty")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.algorithm not in ("bp", "spectral", "both"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if isinstance(self.bp, dict):
            self.bp = BpOptions(**self.bp)
        if isinstance(self.eig, dict):
            self.eig = EigenOptions(**self.eig)
        if self.workers is None:
            self.workers = int(os.environ.get("DSBM_WORKERS", "1"))
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        # surfaces bad (n, T, k, c, prior) and every grid value before any work starts
        for e in self.epsilons:
            for h in self.etas:
                self.params(e, h).pmat

    @property
    def algorithms(self) -> tuple:
        return ALGORITHMS if self.algorithm == "both" else (self.algorithm,)

    def params(self, epsilon: float, eta: float) -> ModelParams:
        return ModelParams(n=self.n, T=self.T, k=self.k, eta=eta, c=self.c,
                           epsilon=epsilon, prior=self.prior)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if d.get("prior") is not None:
            d["prior"] = tuple(d["prior"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ResultRow:
    epsilon: float
    eta: float
    replicate: int
    seed: int
    algorithm: str
    overlap: float
    converged: bool
    iterations: int
    wall_time: float
    error: str = ""
    snapshot_overlap: float = math.nan  # diagnostic: best relabeling chosen per snapshot


def _scores(truth, labels, params) -> dict:
    return {"overlap": overlap(truth, labels, params.k).overlap,
            "snapshot_overlap": snapshot_overlap(truth, labels, params.k, params.n).overlap}


def _run_item(config: RunConfig, ei: int, hi: int, rep: int) -> list:
    eps, eta = config.epsilons[ei], config.etas[hi]
    seed = derive_seed(config.seed, ei, hi, rep)
    rows = []
    try:
        params = config.params(eps, eta)
        net = generate(params, seed)
        graph = build_spatiotemporal_graph(net)
        truth = net.trajectory.flat()
    except Exception as err:  # recorded, never fatal
        return [ResultRow(eps, eta, rep, seed, a, math.nan, False, 0, 0.0, f"generate: {err!r}")
                for a in config.algorithms]
    for alg in config.algorithms:
        t0 = time.perf_counter()
        try:
            if alg == "bp":
                res = run_bp(graph, params, config.bp, seed=seed)
                row = ResultRow(eps, eta, rep, seed, alg, **_scores(truth, res.partition, params),
                                converged=res.converged, iterations=res.iterations, wall_time=0.0)
            else:
                part = spectral_cluster(graph, params, m=config.eig.pairs, seed=seed,
                                        tol=config.eig.tol, max_iters=config.eig.max_iters)
                if part.found:
                    row = ResultRow(eps, eta, rep, seed, alg, **_scores(truth, part.labels, params),
                                    converged=True, iterations=0, wall_time=0.0)
                else:
                    # no informative eigenvector: equivalent to guessing
                    row = ResultRow(eps, eta, rep, seed, alg, 0.0, False, 0, 0.0,
                                    "no informative eigenvector")
        except Exception as err:
            row = ResultRow(eps, eta, rep, seed, alg, math.nan, False, 0, 0.0, repr(err))
        row.wall_time = time.perf_counter() - t0
        rows.append(row)
    return rows


def _run_star(args):
    return _run_item(*args)


def run_items(config: RunConfig) -> list:
    """All rows, ordered by (eta index, epsilon index, replicate, algorithm)."""
    items = [(config, ei, hi, rep)
             for hi in range(len(config.etas))
             for ei in range(len(config.epsilons))
             for rep in range(config.replicates)]
    if config.workers == 1:
        chunks = map(_run_star, items)
        rows = []
        for r in chunks:
            rows.extend(r)
        return rows
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return [row for chunk in pool.map(_run_star, items) for row in chunk]


def summarize(rows: list, config: RunConfig) -> dict:
    """Per-cell mean and standard error, theory thresholds, and transition estimates."""
    cells = []
    for alg in config.algorithms:
        for eta in config.etas:
            for eps in config.epsilons:
                ov = np.array([r.overlap for r in rows if r.algorithm == alg
                               and r.eta == eta and r.epsilon == eps])
                ok = ov[np.isfinite(ov)]
                conv = [r.converged for r in rows if r.algorithm == alg
                        and r.eta == eta and r.epsilon == eps]
                mean = float(ok.mean()) if ok.size else math.nan
                se = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else math.nan
                cells.append({"algorithm": alg, "epsilon": eps, "eta": eta, "mean": mean,
                              "stderr": se, "n_ok": int(ok.size), "n_failed": int(ov.size - ok.size),
                              "converged_fraction": float(np.mean(conv)) if conv else math.nan})
    theory = {}
    for eta in config.etas:
        eps_c, ok = critical_epsilon(config.c, eta, config.k)
        theory[repr(eta)] = {"epsilon_critical": eps_c, "detectable_somewhere": ok}
    transitions = {}
    for alg in config.algorithms:
        transitions[alg] = {repr(eta): transition_estimate(
            [(c["epsilon"], c["mean"]) for c in cells if c["algorithm"] == alg and c["eta"] == eta])
            for eta in config.etas}
    return {"cells": cells, "theory": theory, "transitions": transitions}


def transition_estimate(curve, level: float = TRANSITION_LEVEL):
    """Largest epsilon on the grid whose mean overlap exceeds ``level`` (None if none)."""
    hits = [e for e, m in curve if np.isfinite(m) and m > level]
    return max(hits) if hits else None


@dataclass
class SweepResult:
    rows: list
    summary: dict

    def cell_means(self, algorithm: str = "bp") -> dict:
        return {(c["epsilon"], c["eta"]): c["mean"] for c in self.summary["cells"]
                if c["algorithm"] == algorithm}


def _write_rows(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=[f.name for f in dataclasses.fields(ResultRow)])
        w.writeheader()
        for r in rows:
            w.writerow(dataclasses.asdict(r))


def _prepare_out(config: RunConfig):
    if config.out_dir is None:
        return None
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    return out


def run_sweep(config: RunConfig) -> SweepResult:
    out = _prepare_out(config)
    rows = run_items(config)
    summary = summarize(rows, config)
    if out is not None:
        _write_rows(rows, out / "rows.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    failed = sum(1 for r in rows if r.error and not math.isfinite(r.overlap))
    if failed:
        log.warning("%d of %d runs failed", failed, len(rows))
    return SweepResult(rows, summary)


def boundary_curve(c: float, k: int, n_points: int = 101) -> list:
    """Samples ``(eta, eps_c(eta))`` of the detectability boundary."""
    return [(float(h), critical_epsilon(c, float(h), k)[0]) for h in np.linspace(0, 1, n_points)]


def run_heatmap(config: RunConfig) -> SweepResult:
    """Sweep plus one matrix per algorithm (rows eta, columns epsilon) and the boundary curve."""
    res = run_sweep(config)
    mats = {}
    for alg in config.algorithms:
        means = res.cell_means(alg)
        mats[alg] = np.array([[means[(e, h)] for e in config.epsilons] for h in config.etas])
    res.summary["heatmaps"] = {a: m.tolist() for a, m in mats.items()}
    res.summary["boundary"] = boundary_curve(config.c, config.k)
    if config.out_dir is not None:
        out = Path(config.out_dir)
        for alg, m in mats.items():
            with open(out / f"heatmap_{alg}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["eta\\epsilon"] + config.epsilons)
                for h, row in zip(config.etas, m):
                    w.writerow([h] + row.tolist())
        with open(out / "boundary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eta", "epsilon_critical"])
            w.writerows(res.summary["boundary"])
        (out / "summary.json").write_text(json.dumps(res.summary, indent=2) + "\n")
    return res


@dataclass
class SpectrumConfig:
    n: int = 300
    T: int = 5
    k: int = 2
    c: float = 3.0
    epsilon: float = 0.05
    eta: float = 0.5
    seed: int = 0
    limit: int = 8000
    out_dir: str | None = None

    def params(self) -> ModelParams:
        return ModelParams(n=self.n, T=self.T, k=self.k, eta=self.eta, c=self.c,
                           epsilon=self.epsilon)


def dump_spectrum(config: SpectrumConfig):
    """Full spectrum of B' for one generated instance; writes files when ``out_dir`` is set."""
    params = config.params()
    if 4 * params.n * params.T > config.limit:
        raise ValueError(f"operator dimension {4 * params.n * params.T} exceeds limit {config.limit}")
    net = generate(params, config.seed)
    op = build_operator(build_spatiotemporal_graph(net), params)
    report = full_spectrum(op, limit=config.limit)
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_spectrum(report, out / "spectrum.txt", out / "spectrum.json",
                       {"params": params.to_dict(), "seed": config.seed})
    return report
