"""Dynamic non-backtracking operator and spectral clustering.

The operator acts on ``4 nT`` vectors made of four node-time blocks
``(x1, x2, x3, x4)``:

    y1 = lam * (A x1 - x2 + A x3)
    y2 = lam * ((D - I) x1 + D x3)
    y3 = eta * (At x1 + At x3 - x4)
    y4 = eta * (Dt x1 + (Dt - I) x3)

with ``A, D`` the spatial adjacency/degree and ``At, Dt`` the temporal ones.
Seen from BP around the uniform fixed point, ``x1``/``x2`` are ``lam`` times
the summed incoming/outgoing spatial message deviations of each node-time, and
``x3``/``x4`` are ``eta`` times the summed incoming/outgoing temporal ones.
``x1`` is the per-node-time embedding used for clustering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs
from sklearn.cluster import KMeans

from .generate import SpatioTemporalGraph, rng_stream
from .model import ModelParams

log = logging.getLogger(__name__)

REAL_TOL = 1e-6  # |Im z| < REAL_TOL * |z| counts as real
FERRO_TOL = 1e-8  # entries below FERRO_TOL * max|x| are ignored by the sign test
SNAPSHOT_COHERENCE = 0.8  # at or above this, a vector is ferromagnetic within snapshots
ARPACK_TOL = 1e-10
# Arnoldi restarts for clustering: outliers converge within a few, while eigenvalues
# packed at the bulk edge can take hundreds and carry no group information
ARPACK_MAX_RESTARTS = 20
DENSE_LIMIT = 8000
DENSE_SOLVER_LIMIT = 400  # below this leading_real_eigenpairs solves densely
_ARNOLDI_STREAM = 3


class NonBacktrackingOperator:
    def __init__(self, graph: SpatioTemporalGraph, lam: float, eta: float):
        self.graph = graph
        self.lam = float(lam)
        self.eta = float(eta)
        self.nT = graph.size
        self.A = graph.spatial.tocsr()
        self.At = graph.temporal.tocsr()
        self.d = graph.spatial_degree
        self.dt = graph.temporal_degree

    @property
    def shape(self) -> tuple[int, int]:
        return (4 * self.nT, 4 * self.nT)

    def matvec(self, x):
        """``B' x`` for a vector or a (4nT, m) block of vectors."""
        x = np.asarray(x)
        single = x.ndim == 1
        X = x.reshape(4, self.nT, -1)
        x1, x2, x3, x4 = X
        d = self.d[:, None]
        dt = self.dt[:, None]
        y = np.empty(X.shape, dtype=np.result_type(x.dtype, float))
        y[0] = self.lam * (self.A @ (x1 + x3) - x2)
        y[1] = self.lam * ((d - 1.0) * x1 + d * x3)
        y[2] = self.eta * (self.At @ (x1 + x3) - x4)
        y[3] = self.eta * (dt * x1 + (dt - 1.0) * x3)
        y = y.reshape(4 * self.nT, -1)
        return y[:, 0] if single else y

    __matmul__ = matvec

    def to_sparse(self) -> sp.csr_matrix:
        N = self.nT
        I = sp.identity(N, format="csr")
        D = sp.diags(self.d)
        Dt = sp.diags(self.dt)
        lam, eta = self.lam, self.eta
        B = sp.bmat([
            [lam * self.A, -lam * I, lam * self.A, None],
            [lam * (D - I), None, lam * D, None],
            [eta * self.At, None, eta * self.At, -eta * I],
            [eta * Dt, None, eta * (Dt - I), None],
        ], format="csr")
        B.eliminate_zeros()
        return B

    def to_dense(self) -> np.ndarray:
        """Explicit assembly of the 4 x 4 block matrix."""
        N = self.nT
        I = np.eye(N)
        A = self.A.toarray()
        At = self.At.toarray()
        D = np.diag(self.d)
        Dt = np.diag(self.dt)
        Z = np.zeros((N, N))
        lam, eta = self.lam, self.eta
        return np.block([
            [lam * A, -lam * I, lam * A, Z],
            [lam * (D - I), Z, lam * D, Z],
            [eta * At, Z, eta * At, -eta * I],
            [eta * Dt, Z, eta * (Dt - I), Z],
        ])

    @property
    def sparse(self) -> sp.csr_matrix:
        if getattr(self, "_sparse", None) is None:
            self._sparse = self.to_sparse()
        return self._sparse

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, matmat=self.matvec, dtype=float)


def build_operator(graph: SpatioTemporalGraph, params: ModelParams) -> NonBacktrackingOperator:
    return NonBacktrackingOperator(graph, params.lam, params.eta)


@dataclass
class EigenPair:
    eigenvalue: complex
    eigenvector: np.ndarray
    is_real: bool
    is_ferromagnetic: bool
    residual: float = 0.0
    snapshot_coherence: float = 0.0

    @property
    def is_snapshot_ferromagnetic(self) -> bool:
        """Near-constant sign inside every snapshot.

        Temporal harmonics of the ferromagnetic mode have this form: each
        snapshot is uniformly signed but the sign or amplitude varies in time.
        Like the ferromagnetic vector they carry no group information.
        """
        return self.is_real and self.snapshot_coherence >= SNAPSHOT_COHERENCE

    @property
    def informative(self) -> bool:
        return self.is_real and not self.is_ferromagnetic and not self.is_snapshot_ferromagnetic

    def clustering_block(self, nT: int) -> np.ndarray:
        return np.real(self.eigenvector[:nT])


def is_real(z, tol: float = REAL_TOL) -> bool:
    return abs(np.imag(z)) <= tol * max(abs(z), 1e-300)


def is_ferromagnetic(x, tol: float = FERRO_TOL) -> bool:
    """True when all non-negligible entries of ``x`` share one sign."""
    x = np.real(np.asarray(x))
    scale = np.abs(x).max(initial=0.0)
    if scale == 0:
        return False
    sig = x[np.abs(x) > tol * scale]
    return bool(np.all(sig > 0) or np.all(sig < 0))


def snapshot_coherence(x, n: int) -> float:
    """``sum_t |sum_i x_i(t)| / sum |x|``: 1 when every snapshot has constant sign."""
    x = np.real(np.asarray(x)).reshape(-1, n)
    tot = np.abs(x).sum()
    return float(np.abs(x.sum(axis=1)).sum() / tot) if tot > 0 else 0.0


def _realify(v):
    # rotate a numerically-real eigenvector onto the real axis
    j = np.argmax(np.abs(v))
    v = v * np.exp(-1j * np.angle(v[j]))
    v = np.real(v)
    return v / np.linalg.norm(v)


def _make_pair(op, val, vec) -> EigenPair:
    real = is_real(val)
    if real:
        val = complex(np.real(val), 0.0)
        vec = _realify(vec)
    else:
        vec = vec / np.linalg.norm(vec)
    res = float(np.linalg.norm(op.matvec(vec) - val * vec))
    block = vec[:op.nT]
    ferro = real and is_ferromagnetic(block)
    coh = snapshot_coherence(block, op.graph.n) if real else 0.0
    return EigenPair(complex(val), vec, real, ferro, res, coh)


def _arnoldi(M, nev, tol, max_iters, seed):
    N = M.shape[0]
    if N <= DENSE_SOLVER_LIMIT or nev >= N - 2:
        return np.linalg.eig(M.toarray())
    try:
        v0 = rng_stream(seed, _ARNOLDI_STREAM).standard_normal(N)
        return eigs(M, k=nev, which="LM", tol=tol, v0=v0, maxiter=max_iters,
                    ncv=min(N - 1, max(2 * nev + 12, 40)))
    except ArpackNoConvergence as err:
        log.info("ARPACK stopped after max_iters; %d of %d eigenpairs converged",
                    len(err.eigenvalues), nev)
        return err.eigenvalues, err.eigenvectors


def _uncoupled_eigs(op, nev, tol, max_iters, seed):
    """The ``nev`` largest-modulus eigenpairs of B' when eta = 0, one snapshot at a time.

    With no temporal coupling the x3, x4 rows vanish, so the nonzero spectrum is
    that of the spatial block [[lam A, -lam I], [lam (D - I), 0]], which is block
    diagonal over snapshots; eigenvectors are (v, 0). Near-degenerate copies of
    the same eigenvalue across snapshots make Arnoldi on the full operator slow.
    """
    n, T, nT = op.graph.n, op.graph.T, op.nT
    lam = op.lam
    cap = 2 * n - 2
    per = min(max(4, -(-nev // T) + 2), cap)
    found = {}
    pending = list(range(T))
    while pending:
        for t in pending:
            sl = slice(t * n, (t + 1) * n)
            S = sp.bmat([[lam * op.A[sl, sl], -lam * sp.identity(n)],
                         [lam * sp.diags(op.d[sl] - 1.0), None]], format="csr")
            vals, vecs = _arnoldi(S, per, tol, max_iters, seed + t)
            complete = per >= cap or 2 * n <= DENSE_SOLVER_LIMIT
            found[t] = (vals, vecs, complete)
        # a truncated list may hide eigenvalues above the global nev-th modulus
        mods = np.sort(np.concatenate([np.abs(v) for v, _, _ in found.values()]))[::-1]
        cut = mods[nev - 1] if len(mods) >= nev else 0.0
        pending = [t for t, (v, _, done) in found.items()
                   if not done and np.abs(v).min(initial=np.inf) >= cut]
        per = min(2 * per, cap)
    vals, cols = [], []
    for t in range(T):
        v, X, _ = found[t]
        full = np.zeros((4 * nT, len(v)), dtype=complex)
        full[t * n:(t + 1) * n] = X[:n]
        full[nT + t * n:nT + (t + 1) * n] = X[n:]
        vals.append(v)
        cols.append(full)
    vals = np.concatenate(vals)
    keep = np.argsort(-np.abs(vals), kind="stable")[:nev]
    return vals[keep], np.hstack(cols)[:, keep]


def leading_real_eigenpairs(op: NonBacktrackingOperator, m: int = 4, tol: float = ARPACK_TOL,
                            max_iters: int | None = None, nev: int | None = None,
                            seed: int = 0) -> list[EigenPair]:
    """Largest-modulus eigenpairs with (numerically) real eigenvalues, at most ``m``.

    Uses implicitly restarted Arnoldi on the matvec, asking for ``nev`` eigenvalues
    of largest modulus and keeping the real ones. Operators of dimension up to
    ``DENSE_SOLVER_LIMIT`` are solved densely. The zero operator yields no pairs.
    The Arnoldi start vector is drawn from ``seed``, so results do not depend on
    process state.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    N = op.shape[0]
    if op.sparse.nnz == 0:
        # lam = eta = 0: B' is the zero matrix, with no direction to report
        return []
    nev = min(nev or max(3 * m + 6, 12), N - 2)
    if N <= DENSE_SOLVER_LIMIT:
        vals, vecs = np.linalg.eig(op.to_dense())
    elif op.eta == 0.0:
        vals, vecs = _uncoupled_eigs(op, nev, tol, max_iters, seed)
    else:
        vals, vecs = _arnoldi(op.sparse, nev, tol, max_iters, seed)
    order = np.argsort(-np.abs(vals), kind="stable")
    pairs = []
    seen = []
    for i in order:
        val = vals[i]
        if not is_real(val):
            continue
        # dense solvers can return both members of a nearly-real conjugate pair
        if any(abs(val - s) <= 1e-10 * max(abs(val), 1.0) and abs(np.imag(val)) > 0 for s in seen):
            continue
        seen.append(np.conj(val))
        pairs.append(_make_pair(op, val, vecs[:, i]))
        if len(pairs) == m:
            break
    for p in pairs:
        rel = p.residual / max(abs(p.eigenvalue), 1e-300)
        if rel > 1e-8:
            log.warning("eigenpair %.6g has relative residual %.3g", p.eigenvalue.real, rel)
    return pairs


@dataclass
class SpectralPartition:
    labels: np.ndarray | None  # None when no non-ferromagnetic real eigenvector exists
    eigenvalues: tuple

    @property
    def found(self) -> bool:
        return self.labels is not None


def spectral_partition(pairs: list[EigenPair], k: int, n: int, T: int,
                       seed: int = 0) -> SpectralPartition:
    """Sign split (k = 2) or k-means (k > 2) on the clustering blocks of informative eigenvectors.

    Ferromagnetic vectors and their temporal harmonics are skipped.
    """
    nT = n * T
    useful = [p for p in pairs if p.informative]
    if not useful:
        return SpectralPartition(None, ())
    if k == 2:
        x = useful[0].clustering_block(nT)
        return SpectralPartition((x < 0).astype(np.int64), (useful[0].eigenvalue,))
    chosen = useful[:k - 1]
    X = np.column_stack([p.clustering_block(nT) for p in chosen])
    X = X / np.linalg.norm(X, axis=0, keepdims=True)
    km = KMeans(n_clusters=k, n_init=10, random_state=seed % 2**32).fit(X)
    return SpectralPartition(km.labels_.astype(np.int64), tuple(p.eigenvalue for p in chosen))


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    bulk_radius: float

    @property
    def real_outliers(self) -> np.ndarray:
        """Real eigenvalues strictly outside the bulk disk, by decreasing modulus."""
        ev = self.eigenvalues
        mask = np.array([is_real(z) for z in ev], dtype=bool)
        out = np.real(ev[mask])
        out = out[np.abs(out) > self.bulk_radius * (1 + 1e-9)]
        return out[np.argsort(-np.abs(out))]


def bulk_radius(eigenvalues) -> float:
    """Largest modulus among non-real eigenvalues (0 if all are real)."""
    ev = np.asarray(eigenvalues)
    nonreal = [abs(z) for z in ev if not is_real(z)]
    return float(max(nonreal, default=0.0))


def full_spectrum(op: NonBacktrackingOperator, limit: int = DENSE_LIMIT) -> SpectrumReport:
    if op.shape[0] > limit:
        raise ValueError(f"operator dimension {op.shape[0]} exceeds dense limit {limit}")
    ev = scipy.linalg.eigvals(op.to_dense(), overwrite_a=True, check_finite=False)
    return SpectrumReport(ev, bulk_radius(ev))


def default_pair_count(params: ModelParams) -> int:
    # up to T ferromagnetic harmonics can precede the k - 1 community vectors
    return params.T + params.k + 2


def spectral_cluster(graph: SpatioTemporalGraph, params: ModelParams, m: int | None = None,
                     seed: int = 0, tol: float = ARPACK_TOL,
                     max_iters: int | None = ARPACK_MAX_RESTARTS) -> SpectralPartition:
    """Build the operator, extract real eigenpairs, and partition."""
    op = build_operator(graph, params)
    m = m or default_pair_count(params)
    pairs = leading_real_eigenpairs(op, m=m, tol=tol, max_iters=max_iters, nev=m + 8, seed=seed)
    return spectral_partition(pairs, params.k, params.n, params.T, seed=seed)


def deviation_embedding(state, graph: SpatioTemporalGraph, params: ModelParams) -> np.ndarray:
    """Aggregate message deviations from uniform as a (4 nT, k) array.

    Blocks are ``lam * S``, ``lam * P``, ``eta * Tin`` and ``eta * Tout``: the
    summed deviations of incoming spatial, outgoing spatial, incoming temporal
    and outgoing temporal messages at each node-time. One linearized BP sweep
    around the factorized fixed point maps this vector to ``B'`` times itself.
    """
    n, T, k = params.n, params.T, params.k
    N = n * T
    indptr, _, rev = graph.directed_edges()
    u = 1.0 / k
    sp_dev = state.spatial - u
    owner = np.repeat(np.arange(N), np.diff(indptr))
    S = np.zeros((N, k))
    P = np.zeros((N, k))
    np.add.at(P, owner, sp_dev)
    np.add.at(S, owner, sp_dev[rev])
    t = np.arange(N) // n
    fwd = np.where((t < T - 1)[:, None], state.fwd - u, 0.0)
    bwd = np.where((t > 0)[:, None], state.bwd - u, 0.0)
    Tout = fwd + bwd
    Tin = np.zeros((N, k))
    Tin[n:] += fwd[:N - n]
    Tin[:N - n] += bwd[n:]
    lam, eta = params.lam, params.eta
    return np.concatenate([lam * S, lam * P, eta * Tin, eta * Tout])
