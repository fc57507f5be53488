"""Belief propagation on the spatiotemporal graph.

Messages live on directed spatial edges (one per snapshot edge direction) and
on temporal links (forward ``(i, t) -> (i, t+1)`` and backward
``(i, t) -> (i, t-1)``). Non-edges enter through an adaptive external field
``h_r(t)``, which keeps a sweep linear in the number of spatiotemporal edges.
Under the asynchronous schedule the field tracks every marginal update and is
recomputed exactly at the end of each sweep.

All outgoing messages of a node-time depend only on its incoming messages, so
the asynchronous schedule visits node-times in a fresh random order each sweep
(snapshots shuffled, node-times shuffled within each snapshot) and refreshes
every outgoing message of the visited node at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.optimize import linear_sum_assignment

from .generate import SpatioTemporalGraph, rng_stream
from .model import ModelParams

_BP_STREAM = 2


@dataclass
class BpOptions:
    max_iters: int = 1000
    tol: float = 1e-6
    init_noise: float = 0.1
    exact_nonedges: bool = False  # dense O(n^2 T) non-edge product; small oracles only
    damping: float = 0.0
    external_field: bool = True  # False drops the non-edge term (edge-only likelihood)
    schedule: str = "random"  # "random": asynchronous; "sync": parallel (Jacobi) sweeps
    align_snapshots: bool = True  # undo whole-snapshot label swaps between time slices
    align_every: int = 5
    repair_walls: bool = True  # after convergence, try removing temporal domain walls
    max_wall_repairs: int = 6
    repair_iters: int = 100

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.init_noise < 0:
            raise ValueError("init_noise must be nonnegative")
        if self.max_wall_repairs < 0 or self.repair_iters < 1:
            raise ValueError("wall repair settings must be positive")
        if self.align_every < 1:
            raise ValueError("align_every must be >= 1")
        if self.schedule not in ("random", "sync"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class MessageState:
    """All BP messages for one spatiotemporal graph.

    ``spatial[e]`` is the message along directed spatial edge ``e`` (CSR order of
    ``graph.directed_edges()``); ``fwd[v]`` / ``bwd[v]`` are the temporal
    messages out of node-time ``v`` towards ``v + n`` / ``v - n``. Entries with
    no corresponding temporal link stay uniform and are never read.
    """

    spatial: np.ndarray  # (E, k)
    fwd: np.ndarray  # (nT, k)
    bwd: np.ndarray  # (nT, k)
    field: np.ndarray  # (T, k)
    marginals: np.ndarray  # (nT, k)

    def copy(self) -> "MessageState":
        return MessageState(*(a.copy() for a in
                              (self.spatial, self.fwd, self.bwd, self.field, self.marginals)))

    def permuted(self, perm) -> "MessageState":
        """Same state with group ``r`` renamed to ``perm[r]``."""
        inv = np.argsort(perm)
        return MessageState(*(a[:, inv] for a in
                              (self.spatial, self.fwd, self.bwd, self.field, self.marginals)))


@dataclass
class BpResult:
    marginals: np.ndarray  # (nT, k), node-time order v = t * n + i
    partition: np.ndarray  # (nT,)
    converged: bool
    iterations: int
    final_delta: float
    state: MessageState | None = field(default=None, repr=False)


# --------------------------------------------------------------------------
# kernels


_BIG = 1e150
_SMALL = 1e-150
_HARD = 1e-12  # factor entries this far below the factor's max are not divided out


@nb.njit(cache=True)
def _vanished():
    raise FloatingPointError("BP message vanished (all-zero product)")


def _make_sweep(K):
    """Compile the sweep kernel with the group count fixed, so inner loops unroll."""

    @nb.njit(inline="always", error_model="numpy")
    def write(dst, i, src, damping):
        # an all-zero product becomes NaN here and is caught after the sweep
        s = 0.0
        for r in range(K):
            s += src[r]
        inv = 1.0 / s
        ch = 0.0
        for r in range(K):
            old = dst[i, r]
            new = (1.0 - damping) * src[r] * inv + damping * old
            dst[i, r] = new
            if abs(new - old) > ch:
                ch = abs(new - old)
        return ch

    @nb.njit(inline="always", error_model="numpy")
    def rescale(x):
        m = 0.0
        for r in range(K):
            if x[r] > m:
                m = x[r]
        if m > _BIG or m < _SMALL:
            inv = 1.0 / m
            for r in range(K):
                x[r] *= inv

    @nb.njit(error_model="numpy")
    def sweep(order, n, T, indptr, rev, msg_in, fwd_in, bwd_in, msg_out, fwd_out, bwd_out,
              marg, field, use_field, live, cmat, q, eta, damping, write_msgs, dmax):
        fac = np.empty((max(dmax, 1), K))
        old = np.empty(K)
        inv_n = 1.0 / n
        hard = np.zeros(max(dmax, 1), dtype=np.bool_)
        full = np.empty(K)
        cav = np.empty(K)
        pre = np.empty(K)
        lp = np.empty(K)
        ln = np.empty(K)
        out = np.empty(K)
        delta = 0.0
        for idx in range(order.shape[0]):
            v = order[idx]
            t = v // n
            a = indptr[v]
            d = indptr[v + 1] - a

            for r in range(K):
                lp[r] = 1.0
                ln[r] = 1.0
            if t > 0:
                w = v - n
                s = 0.0
                for u in range(K):
                    s += fwd_in[w, u] * q[u]
                for r in range(K):
                    lp[r] = eta * fwd_in[w, r] + (1.0 - eta) * s
            if t < T - 1:
                w = v + n
                s = 0.0
                for u in range(K):
                    s += bwd_in[w, u] * q[u]
                for r in range(K):
                    ln[r] = eta * bwd_in[w, r] + (1.0 - eta) * s
            for r in range(K):
                full[r] = 1.0

            # factors are scaled to max 1; soft ones are >= _HARD, so ten of them
            # cannot underflow before the next rescale
            n_hard = 0
            n_mul = 0
            for j in range(d):
                e = rev[a + j]
                fmax = 0.0
                fmin = np.inf
                for r in range(K):
                    acc = 0.0
                    for u in range(K):
                        acc += cmat[r, u] * msg_in[e, u]
                    fac[j, r] = acc
                    fmax = max(fmax, acc)
                    fmin = min(fmin, acc)
                hard[j] = fmin <= _HARD * fmax
                sc = 1.0 / fmax
                for r in range(K):
                    fac[j, r] *= sc
                if hard[j]:
                    n_hard += 1
                else:
                    for r in range(K):
                        full[r] *= fac[j, r]
                    n_mul += 1
                    if n_mul == 10:
                        rescale(full)
                        n_mul = 0
            rescale(full)

            if use_field:
                # shifting h within a time slice only rescales the messages
                hmin = np.inf
                for r in range(K):
                    hmin = min(hmin, field[t, r])
                for r in range(K):
                    pre[r] = q[r] * np.exp(hmin - field[t, r])
            else:
                for r in range(K):
                    pre[r] = q[r]

            if write_msgs:
                for r in range(K):
                    cav[r] = pre[r] * lp[r] * ln[r]
                for j in range(d):
                    if not hard[j]:
                        for r in range(K):
                            out[r] = cav[r] * full[r] / fac[j, r]
                    else:
                        for r in range(K):
                            out[r] = cav[r] * full[r]
                    if n_hard > 1 or (n_hard == 1 and not hard[j]):
                        rescale(out)
                        for jj in range(d):
                            if hard[jj] and jj != j:
                                for r in range(K):
                                    out[r] *= fac[jj, r]
                                rescale(out)
                    ch = write(msg_out, a + j, out, damping)
                    delta = max(delta, ch)

            for jj in range(d):
                if hard[jj]:
                    for r in range(K):
                        full[r] *= fac[jj, r]
                    rescale(full)

            if write_msgs:
                if t < T - 1:
                    for r in range(K):
                        out[r] = pre[r] * lp[r] * full[r]
                    delta = max(delta, write(fwd_out, v, out, damping))
                if t > 0:
                    for r in range(K):
                        out[r] = pre[r] * ln[r] * full[r]
                    delta = max(delta, write(bwd_out, v, out, damping))

            for r in range(K):
                out[r] = pre[r] * lp[r] * ln[r] * full[r]
                old[r] = marg[v, r]
            write(marg, v, out, 0.0)
            if live:
                # keep h(t) in step with this node-time's new marginal
                for r in range(K):
                    acc = 0.0
                    for u in range(K):
                        acc += cmat[r, u] * (marg[v, u] - old[u])
                    field[t, r] += acc * inv_n
        for v in range(marg.shape[0]):
            for r in range(K):
                if not (marg[v, r] >= 0.0 and marg[v, r] <= 1.0):
                    _vanished()
        return delta

    return sweep


_SWEEPS = {}


def _sweep(order, n, T, indptr, rev, msg_in, fwd_in, bwd_in, msg_out, fwd_out, bwd_out,
           marg, field, use_field, live, cmat, q, eta, damping, write, dmax):
    K = q.shape[0]
    if K not in _SWEEPS:
        _SWEEPS[K] = _make_sweep(K)
    return _SWEEPS[K](order, n, T, indptr, rev, msg_in, fwd_in, bwd_in, msg_out, fwd_out,
                      bwd_out, marg, field, use_field, live, cmat, q, eta, damping, write, dmax)


# --------------------------------------------------------------------------
# python-level operations


def temporal_lift(mu, eta: float, prior) -> np.ndarray:
    """``eta * mu_r + (1 - eta) * sum_u mu_u q_u``; not renormalized."""
    mu = np.asarray(mu, dtype=float)
    q = np.asarray(prior, dtype=float)
    return eta * mu + (1.0 - eta) * float(mu @ q)


def compute_external_field(marginals, params: ModelParams) -> np.ndarray:
    """``h_r(t) = (1/n) sum_s c_rs sum_l mu^l_s(t)`` as a (T, k) array."""
    n, T, k = params.n, params.T, params.k
    totals = np.asarray(marginals).reshape(T, n, k).sum(axis=1)
    return totals @ params.cmat.T / n


def marginalize_partition(marginals) -> np.ndarray:
    """Row-wise argmax; ties go to the smallest group index."""
    return np.argmax(np.asarray(marginals), axis=1)


def _uniform_state(graph: SpatioTemporalGraph, params: ModelParams) -> MessageState:
    k = params.k
    N = graph.size
    E = graph.spatial.nnz
    u = 1.0 / k
    return MessageState(
        spatial=np.full((E, k), u),
        fwd=np.full((N, k), u),
        bwd=np.full((N, k), u),
        field=np.zeros((params.T, k)),
        marginals=np.full((N, k), u),
    )


def init_messages(graph: SpatioTemporalGraph, params: ModelParams, noise: float,
                  rng: np.random.Generator) -> MessageState:
    """Uniform messages with multiplicative noise ``1 + noise * U(-1, 1)``, renormalized."""
    st = _uniform_state(graph, params)
    if noise > 0:
        for name in ("spatial", "fwd", "bwd"):
            a = getattr(st, name)
            a *= 1.0 + noise * rng.uniform(-1.0, 1.0, size=a.shape)
            a /= a.sum(axis=1, keepdims=True)
    return st


class _Engine:
    """Binds a graph and parameters to the compiled kernels."""

    def __init__(self, graph: SpatioTemporalGraph, params: ModelParams, options: BpOptions):
        if graph.n != params.n or graph.T != params.T:
            raise ValueError("graph and params disagree on (n, T)")
        self.graph = graph
        self.params = params
        self.options = options
        self.indptr, self.dst, self.rev = graph.directed_edges()
        deg = np.diff(self.indptr)
        self.dmax = int(deg.max()) if deg.size else 0
        self.cmat = np.ascontiguousarray(params.cmat, dtype=float)
        self.q = np.ascontiguousarray(params.q, dtype=float)

    def refresh_field(self, st: MessageState):
        st.field[:] = compute_external_field(st.marginals, self.params)

    def _run(self, st, out, order, write, field=None, live=False):
        p = self.params
        use = self.options.external_field
        if field is None:
            field = st.field
        return _sweep(order, p.n, p.T, self.indptr, self.rev,
                      st.spatial, st.fwd, st.bwd, out.spatial, out.fwd, out.bwd,
                      out.marginals, np.ascontiguousarray(field, dtype=float), use,
                      live and use, self.cmat, self.q, float(p.eta),
                      float(self.options.damping), write, self.dmax)

    def marginals(self, st: MessageState):
        """Recompute node marginals from the current messages (no message writes)."""
        order = np.arange(self.graph.size, dtype=np.int64)
        self._run(st, st, order, False)

    def sweep_order(self, rng) -> np.ndarray:
        # snapshots in random order, node-times shuffled within each; blocking by
        # snapshot keeps the touched messages cache-resident
        n, T = self.params.n, self.params.T
        ts = rng.permutation(T)
        within = rng.permuted(np.broadcast_to(np.arange(n), (T, n)), axis=1)
        return (within + ts[:, None] * n).ravel().astype(np.int64)

    def sweep_async(self, st: MessageState, rng) -> float:
        # the field follows each marginal update, then is recomputed exactly
        # to stop round-off drift
        delta = self._run(st, st, self.sweep_order(rng), True, live=True)
        self.refresh_field(st)
        return delta

    def sweep_sync(self, st: MessageState, field=None) -> tuple[MessageState, float]:
        out = st.copy()
        order = np.arange(self.graph.size, dtype=np.int64)
        delta = self._run(st, out, order, True, field=st.field if field is None else field)
        self.refresh_field(out)
        return out, delta


def bp_sweep_sync(state: MessageState, graph: SpatioTemporalGraph, params: ModelParams,
                  field=None, options: BpOptions | None = None) -> MessageState:
    """One parallel update of every message from ``state``.

    ``field`` overrides the (T, k) external field used in the update; by
    default the field stored in ``state`` is used.
    """
    eng = _Engine(graph, params, options or BpOptions())
    out, _ = eng.sweep_sync(state, None if field is None else np.asarray(field, dtype=float))
    return out


def update_spatial_message(state: MessageState, edge: int, graph: SpatioTemporalGraph,
                           params: ModelParams, options: BpOptions | None = None) -> np.ndarray:
    """New value of the message on directed spatial edge ``edge`` (state untouched)."""
    eng = _Engine(graph, params, options or BpOptions())
    v = int(np.searchsorted(eng.indptr, edge, side="right") - 1)
    out = state.copy()
    eng._run(state, out, np.array([v], dtype=np.int64), True)
    return out.spatial[edge]


def update_temporal_message(state: MessageState, v: int, direction: int,
                            graph: SpatioTemporalGraph, params: ModelParams,
                            options: BpOptions | None = None) -> np.ndarray:
    """New temporal message out of node-time ``v``; ``direction`` is +1 or -1."""
    t = v // params.n
    if direction == 1 and t >= params.T - 1 or direction == -1 and t == 0:
        raise ValueError("no temporal link in that direction")
    eng = _Engine(graph, params, options or BpOptions())
    out = state.copy()
    eng._run(state, out, np.array([v], dtype=np.int64), True)
    return out.fwd[v] if direction == 1 else out.bwd[v]


def snapshot_alignment(marginals, n: int, T: int, window: int = 3) -> list:
    """Relabelings that make each snapshot agree with the ones before it.

    Returns ``perms`` where ``perms[t][r]`` is the old group of snapshot ``t``
    that becomes group ``r``. Snapshot ``t`` is matched against the already
    aligned snapshots ``t - window .. t - 1`` by maximizing the summed overlap
    ``sum_d sum_i sum_r mu_i(t-d)[r] mu_i(t)[perm[r]]``. With ``window=1`` this is
    plain consecutive matching; a wider window also catches walls smeared over
    a couple of partly magnetized snapshots, which look consistent pairwise.
    """
    m = np.asarray(marginals).reshape(T, n, -1)
    k = m.shape[2]
    ident = np.arange(k)
    perms = [ident]
    aligned = [m[0]]
    for t in range(1, T):
        agree = sum(prev.T @ m[t] for prev in aligned[-window:])  # [r, s]: old s against r
        rows, cols = linear_sum_assignment(agree, maximize=True)
        perm = cols[np.argsort(rows)]
        gain = agree[ident, perm].sum() - np.trace(agree)
        if not gain > 1e-9 * n:
            perm = ident
        perms.append(perm)
        aligned.append(m[t][:, perm])
    return perms


def _apply_alignment(st: MessageState, perms, indptr, n: int) -> int:
    changed = 0
    for t, perm in enumerate(perms):
        if np.array_equal(perm, np.arange(len(perm))):
            continue
        changed += 1
        lo, hi = t * n, (t + 1) * n
        for a in (st.fwd, st.bwd, st.marginals):
            a[lo:hi] = a[lo:hi][:, perm]
        e0, e1 = indptr[lo], indptr[hi]
        st.spatial[e0:e1] = st.spatial[e0:e1][:, perm]
        st.field[t] = st.field[t][perm]
    return changed


def bethe_free_energy(state: MessageState, graph: SpatioTemporalGraph,
                      params: ModelParams) -> float:
    """Bethe free energy ``F`` of a message state, with non-edges in mean field.

    ``-F`` is the sum of node-time log partition functions minus the spatial
    and temporal link terms, plus ``(1/2n) M(t)^T C M(t)`` per snapshot for
    the non-edges counted twice in the node terms. Constants that depend only
    on the graph are dropped, so only differences between states on the same
    graph are meaningful. Lower is better.
    """
    n, T, k = params.n, params.T, params.k
    N = n * T
    cmat, q, eta = params.cmat, params.q, params.eta
    indptr, _, rev = graph.directed_edges()
    src = np.repeat(np.arange(N), np.diff(indptr))
    msg = state.spatial
    field = compute_external_field(state.marginals, params)

    with np.errstate(divide="ignore"):
        logfac = np.log(msg[rev] @ cmat.T)  # factor at the source from its neighbour
        node = np.log(q)[None, :] - np.repeat(field, n, axis=0)
        if src.size:
            np.add.at(node, src, logfac)
        lp = np.ones((N, k))
        ln = np.ones((N, k))
        if T > 1:
            lp[n:] = eta * state.fwd[:-n] + (1 - eta) * (state.fwd[:-n] @ q)[:, None]
            ln[:-n] = eta * state.bwd[n:] + (1 - eta) * (state.bwd[n:] @ q)[:, None]
        node += np.log(lp) + np.log(ln)
    top = node.max(axis=1, keepdims=True)
    log_zv = top[:, 0] + np.log(np.exp(node - top).sum(axis=1))

    log_zs = np.log(np.einsum("er,rs,es->e", msg, cmat, msg[rev])).sum() / 2
    log_zt = np.log(np.einsum("vr,vr->v", lp[n:], state.bwd[n:])).sum() if T > 1 else 0.0
    totals = state.marginals.reshape(T, n, k).sum(axis=1)
    nonedge = np.einsum("tr,rs,ts->", totals, cmat, totals) / (2 * n)
    return float(-(log_zv.sum() - log_zs - log_zt + nonedge))


def wall_candidates(marginals, n: int, T: int, ratio: float = 0.6) -> list:
    """Snapshot links where the labels may switch permutation, weakest first.

    A wall that BP has settled into is consistent in BP's own frame, so the
    marginals do not disagree across it. It shows as a dip in the agreement
    ``sum_i (mu_i(t) - 1/k) . (mu_i(t+1) - 1/k)`` between consecutive
    snapshots: sharp walls lower the correlation, smeared ones the
    magnetization. Returns ``(agreement, tau, perm)`` for links
    ``tau - 1 -> tau`` that are local minima below ``ratio`` times the median
    agreement. ``perm`` (format of :func:`snapshot_alignment`) is the best
    relabeling of snapshot ``tau`` against ``tau - 1`` that moves every group.
    """
    if T < 2:
        return []
    m = np.asarray(marginals).reshape(T, n, -1)
    k = m.shape[2]
    x = m - 1.0 / k
    agree = (x[:-1] * x[1:]).sum(axis=(1, 2))
    cut = ratio * np.median(agree)
    padded = np.concatenate(([np.inf], agree, [np.inf]))
    out = []
    for j in np.argsort(agree, kind="stable"):
        if not agree[j] < cut:
            break
        if agree[j] > min(padded[j], padded[j + 2]):
            continue
        # forbid keeping any group in place, so the proposal is a real relabeling
        score = m[j].T @ m[j + 1] - 2.0 * n * np.eye(k)
        rows, cols = linear_sum_assignment(score, maximize=True)
        out.append((float(agree[j]), int(j + 1), cols[np.argsort(rows)]))
    return out


def run_bp(graph: SpatioTemporalGraph, params: ModelParams, options: BpOptions | None = None,
           seed: int = 0, init: MessageState | None = None) -> BpResult:
    options = options or BpOptions()
    if options.exact_nonedges:
        from .bp_dense import run_bp_dense
        return run_bp_dense(graph, params, options, seed, init)

    eng = _Engine(graph, params, options)
    rng = rng_stream(seed, _BP_STREAM)
    st = init.copy() if init is not None else init_messages(graph, params, options.init_noise, rng)
    eng.marginals(st)
    eng.refresh_field(st)

    # relabeling whole snapshots is a symmetry of the equations only with a
    # uniform prior and some temporal coupling
    align = options.align_snapshots and params.T > 1 and params.eta > 0 and params.uniform_prior
    converged, it, delta = _iterate(eng, st, options.max_iters, align, rng)
    if align and options.repair_walls:
        st, converged, extra, delta = _repair_walls(eng, st, converged, delta, rng)
        it += extra
    eng.marginals(st)
    return BpResult(st.marginals.copy(), marginalize_partition(st.marginals),
                    converged, it, float(delta), st)


def _iterate(eng: _Engine, st: MessageState, max_iters: int, align: bool, rng):
    options, n, T = eng.options, eng.params.n, eng.params.T

    def realign():
        perms = snapshot_alignment(st.marginals, n, T)
        if _apply_alignment(st, perms, eng.indptr, n):
            eng.refresh_field(st)
            return True
        return False

    delta = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        if options.schedule == "random":
            delta = eng.sweep_async(st, rng)
        else:
            # the sync sweep returns a new state; copy it back so callers keep theirs
            out, delta = eng.sweep_sync(st)
            for name in ("spatial", "fwd", "bwd", "field", "marginals"):
                getattr(st, name)[:] = getattr(out, name)
        if delta < options.tol:
            if align and realign():
                continue
            return True, it, delta
        if align and it % options.align_every == 0:
            realign()
    return False, it, delta


def _repair_walls(eng: _Engine, st: MessageState, converged: bool, delta: float, rng):
    """Try flipping the labels of every snapshot after a suspected domain wall.

    BP can settle with the label permutation changing across time, smeared
    over a few partly magnetized snapshots, where consecutive matching sees no
    swap. Each proposal relabels the suffix, re-runs BP, and is kept only if
    the Bethe free energy drops.
    """
    options, graph, params = eng.options, eng.graph, eng.params
    n, T = params.n, params.T
    eng.marginals(st)
    best = bethe_free_energy(st, graph, params)
    tried, spent = [], 0
    for _ in range(options.max_wall_repairs):
        cands = [c for c in wall_candidates(st.marginals, n, T)
                 if all(abs(c[1] - tau) > 1 for tau in tried)]
        if not cands:
            break
        _, tau, perm = cands[0]
        tried.append(tau)
        trial = st.copy()
        ident = np.arange(params.k)
        _apply_alignment(trial, [ident] * tau + [perm] * (T - tau), eng.indptr, n)
        eng.refresh_field(trial)
        ok, used, d = _iterate(eng, trial, options.repair_iters, True, rng)
        spent += used
        eng.marginals(trial)
        f = bethe_free_energy(trial, graph, params)
        if f < best - 1e-9 * abs(best):
            st, best, converged, delta = trial, f, ok, d
            tried = []
    return st, converged, spent, delta
