"""Text formats for networks and spectra.

Network file grammar (one instance per file, ``#`` starts a comment line)::

    [header]
    n = 512
    T = 40
    k = 2
    eta = 0.5
    c = 16
    epsilon = 0.3
    seed = 7            # or "none"
    prior = 0.5 0.5     # optional, default uniform
    [snapshot 0]
    0 3 17              # t u v
    ...
    [snapshot 1]
    ...
    [labels]            # optional
    0 0 1               # i t g

Every snapshot section from 0 to T-1 must be present (possibly empty), and
the ``t`` field of each edge line must equal the section's index.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .generate import DynamicNetwork, LabelTrajectory
from .model import ModelParams

_SECTION = re.compile(r"^\[(header|snapshot\s+(\d+)|labels)\]$")


def write_network(net: DynamicNetwork, path) -> None:
    p = net.params
    lines = ["[header]", f"n = {p.n}", f"T = {p.T}", f"k = {p.k}", f"eta = {p.eta!r}",
             f"c = {p.c!r}", f"epsilon = {p.epsilon!r}",
             f"seed = {'none' if net.seed is None else int(net.seed)}"]
    if not p.uniform_prior:
        lines.append("prior = " + " ".join(repr(float(x)) for x in p.q))
    for t, e in enumerate(net.snapshots):
        lines.append(f"[snapshot {t}]")
        lines.extend(f"{t} {u} {v}" for u, v in e)
    if net.trajectory is not None:
        lines.append("[labels]")
        lab = net.trajectory.labels
        for t in range(p.T):
            lines.extend(f"{i} {t} {lab[i, t]}" for i in range(p.n))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(items: dict) -> tuple[ModelParams, int | None]:
    missing = {"n", "T", "k", "eta", "c", "epsilon"} - items.keys()
    if missing:
        raise ValueError(f"header is missing {sorted(missing)}")
    prior = None
    if "prior" in items:
        prior = tuple(float(x) for x in items["prior"].split())
    params = ModelParams(n=int(items["n"]), T=int(items["T"]), k=int(items["k"]),
                         eta=float(items["eta"]), c=float(items["c"]),
                         epsilon=float(items["epsilon"]), prior=prior)
    seed = items.get("seed", "none")
    return params, None if seed.lower() == "none" else int(seed)


def read_network(path) -> DynamicNetwork:
    header: dict[str, str] = {}
    snaps: dict[int, list] = {}
    labels = []
    section = None
    cur = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1).split()[0]
            if section == "snapshot":
                cur = int(m.group(2))
                if cur in snaps:
                    raise ValueError(f"line {lineno}: snapshot {cur} repeated")
                snaps[cur] = []
            continue
        if section == "header":
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            header[key.strip()] = val.strip()
        elif section == "snapshot":
            f = line.split()
            if len(f) != 3:
                raise ValueError(f"line {lineno}: expected 't u v'")
            t, u, v = map(int, f)
            if t != cur:
                raise ValueError(f"line {lineno}: edge time {t} inside snapshot {cur}")
            snaps[cur].append((u, v))
        elif section == "labels":
            f = line.split()
            if len(f) != 3:
                raise ValueError(f"line {lineno}: expected 'i t g'")
            labels.append(tuple(map(int, f)))
        else:
            raise ValueError(f"line {lineno}: content outside any section")
    params, seed = _parse_header(header)
    if sorted(snaps) != list(range(params.T)):
        raise ValueError(f"expected snapshot sections 0..{params.T - 1}")
    edges = [np.array(snaps[t], dtype=np.int64).reshape(-1, 2) for t in range(params.T)]
    traj = None
    if labels:
        lab = np.full((params.n, params.T), -1, dtype=np.int64)
        for i, t, g in labels:
            lab[i, t] = g
        if (lab < 0).any():
            raise ValueError("labels section does not cover every node-time")
        traj = LabelTrajectory(lab, params.k)
    return DynamicNetwork(params, edges, traj, seed)


def write_labels(labels, n: int, path) -> None:
    """Node-time labels (``v = t * n + i`` order) as ``i t g`` lines."""
    labels = np.asarray(labels).ravel()
    rows = (f"{v % n} {v // n} {g}" for v, g in enumerate(labels))
    Path(path).write_text("\n".join(rows) + "\n")


def read_labels(path, n: int, T: int) -> np.ndarray:
    lab = np.full(n * T, -1, dtype=np.int64)
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            i, t, g = map(int, line.split())
            lab[t * n + i] = g
    if (lab < 0).any():
        raise ValueError("labels do not cover every node-time")
    return lab


def write_spectrum(report, path_txt, path_json, extra: dict | None = None) -> dict:
    """Eigenvalues as ``re im`` lines plus a JSON summary."""
    ev = np.asarray(report.eigenvalues)
    np.savetxt(path_txt, np.column_stack([ev.real, ev.imag]), fmt="%.12e")
    summary = {
        "dimension": int(ev.size),
        "bulk_radius": float(report.bulk_radius),
        "real_outliers": [float(x) for x in report.real_outliers],
    }
    summary.update(extra or {})
    Path(path_json).write_text(json.dumps(summary, indent=2) + "\n")
    return summary
