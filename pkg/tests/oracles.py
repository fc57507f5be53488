"""Independent reference implementations used only by the tests.

Nothing here imports the package's inference code; each oracle is written
from the model definition directly and kept as plain as possible.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import brentq


# -- thresholds --------------------------------------------------------------


def offspring_radius(c, lam, eta):
    """Spectral radius of the edge-type offspring matrix, computed numerically.

    Following a spatial edge into a node-time reaches c new spatial edges and 2
    temporal ones; following a temporal edge reaches c spatial edges and 1
    temporal one. Each step carries correlation lam (spatial) or eta (temporal),
    so the second-moment weights are lam^2 and eta^2.
    """
    a = c * lam ** 2
    e2 = eta ** 2
    M = np.array([[a, 2 * e2], [a, e2]])
    return float(max(abs(np.linalg.eigvals(M))))


def critical_epsilon_root(c, eta, k=2):
    """Largest epsilon with offspring radius >= 1, by bracketing root search."""

    def f(eps):
        lam = (1 - eps) / (1 + (k - 1) * eps)
        return offspring_radius(c, lam, eta) - 1.0

    if f(0.0) <= 0:
        return 0.0
    return brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)


# -- brute-force posteriors ---------------------------------------------------


def enumerate_joint(n, T, k, q, eta, P, snapshots, include_nonedges=True):
    """Normalized posterior weight of every labeling, as an array of shape (k,) * nT.

    Weight = P(labels) * P(edges | labels): the Markov chain prior times, per
    snapshot, p_rs for every edge and (if ``include_nonedges``) 1 - p_rs for
    every non-adjacent pair. Axis ``v`` is node-time ``v = t * n + i``.
    """
    q = np.asarray(q, dtype=float)
    P = np.asarray(P, dtype=float)
    edges = [set(map(tuple, np.sort(np.asarray(e).reshape(-1, 2), axis=1).tolist()))
             for e in snapshots]
    N = n * T
    # every labeling as a row, in itertools.product order (first axis slowest)
    lab = np.indices((k,) * N).reshape(N, -1).T
    g = lab.reshape(-1, T, n)
    W = np.prod(q[g[:, 0]], axis=1)
    for t in range(1, T):
        same = g[:, t] == g[:, t - 1]
        W = W * np.prod(eta * same + (1 - eta) * q[g[:, t]], axis=1)
    for t in range(T):
        for (i, j) in itertools.combinations(range(n), 2):
            p = P[g[:, t, i], g[:, t, j]]
            if (i, j) in edges[t]:
                W = W * p
            elif include_nonedges:
                W = W * (1 - p)
    return (W / W.sum()).reshape((k,) * (n * T))


def enumerate_posterior(n, T, k, q, eta, P, snapshots, include_nonedges=True):
    """Exact node-time marginals, shape (nT, k)."""
    W = enumerate_joint(n, T, k, q, eta, P, snapshots, include_nonedges)
    N = n * T
    return np.array([W.sum(axis=tuple(a for a in range(N) if a != v)) for v in range(N)])


def pair_marginal(W, v, w):
    """Exact joint marginal of node-times ``v`` and ``w`` from ``enumerate_joint`` output."""
    N = W.ndim
    m = W.sum(axis=tuple(a for a in range(N) if a not in (v, w)))
    return m if v < w else m.T


def random_forest_snapshots(rng, n, T, p_edge=0.5):
    """Snapshots whose spatiotemporal graph is a forest.

    Temporal links join all copies of a node, so a spatial edge is allowed only
    if it joins two node chains not yet connected (union-find over nodes).
    """
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    snaps = []
    for _ in range(T):
        e = []
        for i, j in itertools.combinations(range(n), 2):
            if rng.random() < p_edge and find(i) != find(j):
                parent[find(i)] = find(j)
                e.append((i, j))
        snaps.append(np.array(e, dtype=np.int64).reshape(-1, 2))
    return snaps


# -- static BP ----------------------------------------------------------------


def static_bp(n, k, q, cmat, edges, iters=2000, tol=1e-12, init=None, seed=0, damping=0.0):
    """Plain dictionary-based BP for one static SBM snapshot with the
    mean-field non-edge term exp(-h_r), h_r = (1/n) sum_s c_rs sum_l mu^l_s.

    Parallel updates with a fixed field recomputed each iteration; ``damping``
    mixes in the previous message to suppress period-two oscillation.
    """
    rng = np.random.default_rng(seed)
    q = np.asarray(q, dtype=float)
    nbrs = {i: [] for i in range(n)}
    for a, b in np.asarray(edges).reshape(-1, 2):
        nbrs[int(a)].append(int(b))
        nbrs[int(b)].append(int(a))
    msg = {}
    for i in range(n):
        for j in nbrs[i]:
            m = np.full(k, 1.0 / k) if init is None else init[(i, j)].copy()
            if init is None:
                m *= 1 + 0.1 * rng.uniform(-1, 1, k)
            msg[(i, j)] = m / m.sum()

    def marginals(msg):
        out = np.empty((n, k))
        for i in range(n):
            b = q.copy()
            for l in nbrs[i]:
                b = b * (cmat @ msg[(l, i)])
            out[i] = b / b.sum()
        return out

    mu = marginals(msg)
    for _ in range(iters):
        h = cmat @ mu.sum(axis=0) / n
        new = {}
        for (i, j) in msg:
            b = q * np.exp(-h)
            for l in nbrs[i]:
                if l != j:
                    b = b * (cmat @ msg[(l, i)])
            new[(i, j)] = (1 - damping) * b / b.sum() + damping * msg[(i, j)]
        delta = max((np.abs(new[e] - msg[e]).max() for e in msg), default=0.0)
        msg = new
        mu_new = np.empty((n, k))
        for i in range(n):
            b = q * np.exp(-h)
            for l in nbrs[i]:
                b = b * (cmat @ msg[(l, i)])
            mu_new[i] = b / b.sum()
        mu = mu_new
        if delta < tol:
            break
    return mu, msg


# -- operator assembly ---------------------------------------------------------


def assemble_bprime(n, T, lam, eta, snapshots):
    """B' built entry by entry from node-time adjacency lists."""
    N = n * T
    A = np.zeros((N, N))
    for t, e in enumerate(snapshots):
        for a, b in np.asarray(e).reshape(-1, 2):
            A[t * n + a, t * n + b] = 1
            A[t * n + b, t * n + a] = 1
    At = np.zeros((N, N))
    for t in range(T - 1):
        for i in range(n):
            At[t * n + i, (t + 1) * n + i] = 1
            At[(t + 1) * n + i, t * n + i] = 1
    B = np.zeros((4 * N, 4 * N))
    for v in range(N):
        d = A[v].sum()
        dt = At[v].sum()
        for w in range(N):
            if A[v, w]:
                B[v, w] += lam
                B[v, 2 * N + w] += lam
            if At[v, w]:
                B[2 * N + v, w] += eta
                B[2 * N + v, 2 * N + w] += eta
        B[v, N + v] = -lam
        B[N + v, v] = lam * (d - 1)
        B[N + v, 2 * N + v] = lam * d
        B[2 * N + v, 3 * N + v] = -eta
        B[3 * N + v, v] = eta * dt
        B[3 * N + v, 2 * N + v] = eta * (dt - 1)
    return B
