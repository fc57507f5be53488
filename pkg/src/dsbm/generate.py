"""Sampling label trajectories and edge snapshots from the dynamic SBM.

Node-time ``(i, t)`` is flattened to ``v = t * n + i`` everywhere, so the
spatial adjacency of the spatiotemporal graph is block diagonal over ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import ModelParams

_LABELS_STREAM = 0
_EDGES_STREAM = 1


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, key...)``.

    Streams are addressed by key rather than drawn sequentially, so results do
    not depend on the order (or the process) in which they are consumed.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic 64-bit child seed of ``seed`` for ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class LabelTrajectory:
    labels: np.ndarray  # (n, T), entry (i, t) is g_i(t)
    k: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("labels must be an (n, T) array")
        if lab.size and (lab.min() < 0 or lab.max() >= self.k):
            raise ValueError("label out of range")
        object.__setattr__(self, "labels", lab.astype(np.int64))

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def T(self) -> int:
        return self.labels.shape[1]

    def flat(self) -> np.ndarray:
        """Labels in node-time order ``v = t * n + i``."""
        return self.labels.T.ravel()


@dataclass
class DynamicNetwork:
    params: ModelParams
    snapshots: list  # T arrays of shape (m_t, 2), rows (u, v) with u < v
    trajectory: LabelTrajectory | None = None
    seed: int | None = None

    def __post_init__(self):
        if len(self.snapshots) != self.params.T:
            raise ValueError(f"expected {self.params.T} snapshots, got {len(self.snapshots)}")
        n = self.params.n
        clean = []
        for t, e in enumerate(self.snapshots):
            e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
            if e.size:
                if e.min() < 0 or e.max() >= n:
                    raise ValueError(f"snapshot {t}: node id out of range")
                if np.any(e[:, 0] == e[:, 1]):
                    raise ValueError(f"snapshot {t}: self-loop")
                e = np.sort(e, axis=1)
                keys = e[:, 0] * n + e[:, 1]
                if np.unique(keys).size != keys.size:
                    raise ValueError(f"snapshot {t}: duplicate edge")
                e = e[np.argsort(keys, kind="stable")]
            clean.append(e)
        self.snapshots = clean
        if self.trajectory is not None:
            if self.trajectory.labels.shape != (n, self.params.T):
                raise ValueError("trajectory shape does not match params")

    @property
    def n_edges(self) -> int:
        return sum(len(e) for e in self.snapshots)

    def adjacency(self, t: int) -> sp.csr_matrix:
        n = self.params.n
        e = self.snapshots[t]
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def degrees(self, t: int) -> np.ndarray:
        e = self.snapshots[t]
        return np.bincount(e.ravel(), minlength=self.params.n)


def sample_label_trajectories(params: ModelParams, seed: int) -> LabelTrajectory:
    """Markov label chain: keep with probability eta, otherwise redraw from the prior."""
    rng = rng_stream(seed, _LABELS_STREAM)
    n, T, k = params.n, params.T, params.k
    q = params.q
    labels = np.empty((n, T), dtype=np.int64)
    labels[:, 0] = rng.choice(k, size=n, p=q)
    for t in range(1, T):
        keep = rng.random(n) < params.eta
        fresh = rng.choice(k, size=n, p=q)
        labels[:, t] = np.where(keep, labels[:, t - 1], fresh)
    return LabelTrajectory(labels, k)


def _distinct_keys(rng, m, n_keys, draw, enumerate_keys):
    """Uniform random m-subset of a key space of size ``n_keys``.

    Sparse case: union of i.i.d. proposals from ``draw(size)`` (a set of distinct
    i.i.d. draws is a uniform subset given its size), trimmed uniformly to m.
    Dense case: choose directly from ``enumerate_keys()``.
    """
    if m == 0:
        return np.empty(0, dtype=np.int64)
    if 3 * m > n_keys:
        return rng.choice(enumerate_keys(), size=m, replace=False)
    keys = np.empty(0, dtype=np.int64)
    while keys.size < m:
        need = m - keys.size
        keys = np.union1d(keys, draw(need + need // 8 + 8))
    if keys.size > m:
        keys = rng.choice(keys, size=m, replace=False)
    return keys


def _sample_within(rng, members, p):
    """Edges inside one group, each of the C(n_r, 2) pairs with probability p."""
    nr = len(members)
    n_pairs = nr * (nr - 1) // 2
    if n_pairs == 0 or p == 0:
        return np.empty((0, 2), dtype=np.int64)
    m = rng.binomial(n_pairs, p)

    def draw(size):
        a = rng.integers(0, nr, size)
        b = rng.integers(0, nr, size)
        ok = a != b
        return np.minimum(a[ok], b[ok]) * nr + np.maximum(a[ok], b[ok])

    def enumerate_keys():
        lo, hi = np.triu_indices(nr, 1)
        return lo * nr + hi

    keys = _distinct_keys(rng, m, n_pairs, draw, enumerate_keys)
    return np.column_stack([members[keys // nr], members[keys % nr]])


def _sample_between(rng, mem_r, mem_s, p):
    nr, ns = len(mem_r), len(mem_s)
    n_pairs = nr * ns
    if n_pairs == 0 or p == 0:
        return np.empty((0, 2), dtype=np.int64)
    m = rng.binomial(n_pairs, p)

    def draw(size):
        return rng.integers(0, nr, size) * ns + rng.integers(0, ns, size)

    keys = _distinct_keys(rng, m, n_pairs, draw, lambda: np.arange(n_pairs))
    return np.column_stack([mem_r[keys // ns], mem_s[keys % ns]])


def sample_snapshot(labels_t: np.ndarray, params: ModelParams, rng) -> np.ndarray:
    """One snapshot in O(expected edges): Binomial pair counts per block, then distinct pairs."""
    p = params.pmat
    k = params.k
    members = [np.flatnonzero(labels_t == r) for r in range(k)]
    parts = []
    for r in range(k):
        parts.append(_sample_within(rng, members[r], p[r, r]))
        for s in range(r + 1, k):
            parts.append(_sample_between(rng, members[r], members[s], p[r, s]))
    e = np.concatenate(parts) if parts else np.empty((0, 2), dtype=np.int64)
    return np.sort(e, axis=1)


def sample_edges(trajectory: LabelTrajectory, params: ModelParams, seed: int) -> DynamicNetwork:
    if trajectory.labels.shape != (params.n, params.T):
        raise ValueError("trajectory shape does not match params")
    params.pmat  # raises if some p_rs > 1
    snaps = []
    for t in range(params.T):
        rng = rng_stream(seed, _EDGES_STREAM, t)
        snaps.append(sample_snapshot(trajectory.labels[:, t], params, rng))
    return DynamicNetwork(params, snaps, trajectory, seed)


def sample_edges_naive(trajectory: LabelTrajectory, params: ModelParams, rng) -> DynamicNetwork:
    """O(n^2 T) reference sampler: one Bernoulli draw per pair and snapshot."""
    p = params.pmat
    n = params.n
    iu, ju = np.triu_indices(n, 1)
    snaps = []
    for t in range(params.T):
        g = trajectory.labels[:, t]
        hit = rng.random(iu.size) < p[g[iu], g[ju]]
        snaps.append(np.column_stack([iu[hit], ju[hit]]))
    return DynamicNetwork(params, snaps, trajectory, None)


def generate(params: ModelParams, seed: int) -> DynamicNetwork:
    """Trajectory plus snapshots; identical ``(params, seed)`` gives identical output."""
    traj = sample_label_trajectories(params, seed)
    return sample_edges(traj, params, seed)


@dataclass(frozen=True)
class SpatioTemporalGraph:
    n: int
    T: int
    spatial: sp.csr_matrix  # nT x nT, block diagonal over t
    temporal: sp.csr_matrix  # nT x nT, links (i, t) <-> (i, t + 1)

    @property
    def size(self) -> int:
        return self.n * self.T

    @property
    def spatial_degree(self) -> np.ndarray:
        return np.asarray(self.spatial.sum(axis=1)).ravel()

    @property
    def temporal_degree(self) -> np.ndarray:
        return np.asarray(self.temporal.sum(axis=1)).ravel()

    @property
    def n_temporal_edges(self) -> int:
        return self.temporal.nnz // 2

    @property
    def n_spatial_edges(self) -> int:
        return self.spatial.nnz // 2

    def directed_edges(self):
        """CSR ``(indptr, dst, rev)`` of directed spatial edges.

        Edge ``e`` runs from the row owning it to ``dst[e]``; ``rev[e]`` is the
        index of the opposite edge.
        """
        A = self.spatial
        indptr = A.indptr.astype(np.int64)
        dst = A.indices.astype(np.int64)
        src = np.repeat(np.arange(self.size, dtype=np.int64), np.diff(indptr))
        keys = src * self.size + dst
        rev = np.searchsorted(keys, dst * self.size + src)
        return indptr, dst, rev


def build_spatiotemporal_graph(network: DynamicNetwork) -> SpatioTemporalGraph:
    n, T = network.params.n, network.params.T
    N = n * T
    rows, cols = [], []
    for t, e in enumerate(network.snapshots):
        off = t * n
        rows += [e[:, 0] + off, e[:, 1] + off]
        cols += [e[:, 1] + off, e[:, 0] + off]
    r = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    c = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    spatial = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(N, N))
    spatial.sort_indices()

    v = np.arange(n * (T - 1), dtype=np.int64)
    tr = np.concatenate([v, v + n])
    tc = np.concatenate([v + n, v])
    temporal = sp.csr_matrix((np.ones(tr.size), (tr, tc)), shape=(N, N))
    temporal.sort_indices()
    return SpatioTemporalGraph(n, T, spatial, temporal)
