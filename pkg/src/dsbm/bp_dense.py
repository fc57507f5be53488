"""Dense BP with exact non-edge factors.

Every ordered pair ``(i, j)`` at every time carries a cavity message, with
factor ``p_rs`` on edges and ``1 - p_rs`` on non-edges. Cost is O(n^3 T k^2)
per sweep, so this is for small oracle instances only. Updates are parallel
(all messages from the previous iterate).
"""

from __future__ import annotations

import numpy as np

from .generate import SpatioTemporalGraph, rng_stream
from .model import ModelParams

_BP_STREAM = 2


def _norm(x):
    s = x.sum(axis=-1, keepdims=True)
    if np.any(~(s > 0)):
        raise FloatingPointError("BP message vanished (all-zero product)")
    return x / s


def _lift(m, q, eta):
    return eta * m + (1.0 - eta) * (m @ q)[..., None]


def run_bp_dense(graph: SpatioTemporalGraph, params: ModelParams, options, seed=0, init=None):
    from .bp import BpResult, marginalize_partition

    if init is not None:
        raise ValueError("dense BP does not accept an initial sparse state")
    n, T, k = params.n, params.T, params.k
    q = params.q
    eta = params.eta
    P = params.pmat
    A = [graph.spatial[t * n:(t + 1) * n, t * n:(t + 1) * n].toarray() > 0 for t in range(T)]

    rng = rng_stream(seed, _BP_STREAM)

    def noisy(shape):
        x = np.full(shape, 1.0 / k)
        if options.init_noise > 0:
            x *= 1.0 + options.init_noise * rng.uniform(-1.0, 1.0, size=shape)
        return _norm(x)

    M = noisy((T, n, n, k))  # M[t, l, i] = message l(t) -> i(t)
    fwd = noisy((T, n, k))  # i(t) -> i(t+1)
    bwd = noisy((T, n, k))  # i(t) -> i(t-1)
    offdiag = ~np.eye(n, dtype=bool)

    def incoming(M):
        # F[t, l, i, r] = sum_s psi_li(r, s) M[t, l, i, s]; identity on the diagonal
        fe = M @ P.T
        fn = M @ (1.0 - P).T
        F = np.where(np.stack(A)[..., None], fe, fn)
        F[:, ~offdiag] = 1.0
        return F

    def lifts(fwd, bwd):
        lp = np.ones((T, n, k))
        ln = np.ones((T, n, k))
        lp[1:] = _lift(fwd[:-1], q, eta)
        ln[:-1] = _lift(bwd[1:], q, eta)
        return lp, ln

    def step(M, fwd, bwd):
        F = incoming(M)
        lp, ln = lifts(fwd, bwd)
        full = np.prod(F, axis=1)  # (T, i, k): product over senders l
        newM = np.empty_like(M)
        for t in range(T):
            for j in range(n):
                # cavity: all senders into i except j
                Fx = F[t].copy()
                Fx[j, :, :] = 1.0
                cav = np.prod(Fx, axis=0)  # (i, k)
                newM[t, :, j] = q * lp[t] * ln[t] * cav
        newM[:, ~offdiag] = 1.0 / k
        newM = _norm(newM)
        newf = _norm(q * lp * full)
        newb = _norm(q * ln * full)
        marg = _norm(q * lp * ln * full)
        return newM, newf, newb, marg

    damp = options.damping
    converged = False
    delta = np.inf
    it = 0
    for it in range(1, options.max_iters + 1):
        nM, nf, nb, _ = step(M, fwd, bwd)
        nM = (1 - damp) * nM + damp * M
        nf = (1 - damp) * nf + damp * fwd
        nb = (1 - damp) * nb + damp * bwd
        delta = float(max(np.abs(nM - M).max(), np.abs(nf[:-1] - fwd[:-1]).max(initial=0.0),
                          np.abs(nb[1:] - bwd[1:]).max(initial=0.0)))
        M, fwd, bwd = nM, nf, nb
        if delta < options.tol:
            converged = True
            break
    _, _, _, marg = step(M, fwd, bwd)
    flat = marg.reshape(T * n, k)
    return BpResult(flat, marginalize_partition(flat), converged, it, delta, None)
