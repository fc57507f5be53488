"""Permutation-maximized, chance-normalized overlap between labelings."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

_BRUTE_FORCE_MAX_K = 8


@dataclass(frozen=True)
class OverlapReport:
    overlap: float
    best_permutation: tuple[int, ...]  # inferred group r maps to truth group perm[r]
    raw_agreement: float


def confusion(truth, inferred, k: int) -> np.ndarray:
    """``C[r, s]`` = number of items with inferred label r and true label s."""
    truth = np.asarray(truth).ravel()
    inferred = np.asarray(inferred).ravel()
    C = np.zeros((k, k), dtype=np.int64)
    np.add.at(C, (inferred, truth), 1)
    return C


def _best_brute(C):
    k = C.shape[0]
    best, best_perm = -1, None
    for perm in itertools.permutations(range(k)):
        hits = int(C[np.arange(k), perm].sum())
        if hits > best:
            best, best_perm = hits, perm
    return best, best_perm


def _best_hungarian(C):
    rows, cols = linear_sum_assignment(C, maximize=True)
    perm = np.empty(C.shape[0], dtype=int)
    perm[rows] = cols
    return int(C[rows, cols].sum()), tuple(int(x) for x in perm)


def overlap(truth, inferred, k: int, method: str = "auto") -> OverlapReport:
    """Fraction correct under the best relabeling, rescaled so chance is 0 and perfect is 1."""
    truth = np.asarray(truth)
    inferred = np.asarray(inferred)
    if truth.shape != inferred.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {inferred.shape}")
    if truth.size == 0:
        raise ValueError("empty labelings")
    for name, a in (("truth", truth), ("inferred", inferred)):
        if a.min() < 0 or a.max() >= k:
            raise ValueError(f"{name} labels outside 0..{k - 1}")
    C = confusion(truth, inferred, k)
    if method == "auto":
        method = "brute" if k <= _BRUTE_FORCE_MAX_K else "hungarian"
    hits, perm = _best_brute(C) if method == "brute" else _best_hungarian(C)
    raw = hits / truth.size
    return OverlapReport((raw - 1.0 / k) / (1.0 - 1.0 / k), tuple(perm), raw)


def overlap_per_snapshot(truth, inferred, k: int, n: int) -> np.ndarray:
    """Per-snapshot overlaps for node-time ordered labelings (diagnostic only)."""
    truth = np.asarray(truth).reshape(-1, n)
    inferred = np.asarray(inferred).reshape(-1, n)
    return np.array([overlap(a, b, k).overlap for a, b in zip(truth, inferred)])


def snapshot_overlap(truth, inferred, k: int, n: int) -> OverlapReport:
    """Overlap over all node-times with a separate best relabeling per snapshot.

    Diagnostic only. When snapshots are decoupled (eta = 0) the model is
    symmetric under an independent group permutation of every snapshot, and
    this score shows what the joint overlap cannot. Its chance level is higher
    (about ``sqrt(2 / (pi n))`` rather than ``sqrt(2 / (pi n T))``).
    ``best_permutation`` is that of the first snapshot.
    """
    truth = np.asarray(truth)
    inferred = np.asarray(inferred)
    if truth.shape != inferred.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {inferred.shape}")
    if truth.size == 0 or truth.size % n:
        raise ValueError("labelings must hold a whole number of snapshots")
    hits = 0
    first = None
    for a, b in zip(truth.reshape(-1, n), inferred.reshape(-1, n)):
        rep = overlap(a, b, k)
        hits += round(rep.raw_agreement * n)
        first = first or rep.best_permutation
    raw = hits / truth.size
    return OverlapReport((raw - 1.0 / k) / (1.0 - 1.0 / k), first, raw)

