import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dsbm.spectral as spectral
from dsbm.bp import BpOptions, bp_sweep_sync, init_messages, run_bp
from dsbm.generate import DynamicNetwork, build_spatiotemporal_graph, generate
from dsbm.metrics import overlap
from dsbm.model import ModelParams
from dsbm.spectral import (EigenPair, build_operator, deviation_embedding, full_spectrum,
                           is_ferromagnetic, leading_real_eigenpairs, snapshot_coherence,
                           spectral_cluster, spectral_partition)
from oracles import assemble_bprime


def _instance(seed=0, **kw):
    base = dict(n=8, T=3, k=2, eta=0.6, c=3.0, epsilon=0.2)
    base.update(kw)
    p = ModelParams(**base)
    net = generate(p, seed)
    return p, net, build_spatiotemporal_graph(net)


@settings(max_examples=20)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 10), T=st.integers(1, 4),
       eps=st.floats(0, 1), eta=st.floats(0, 1))
def test_operator_matches_entrywise_assembly(seed, n, T, eps, eta):
    p, net, g = _instance(seed, n=n, T=T, epsilon=eps, eta=eta, c=min(3.0, n / 2))
    op = build_operator(g, p)
    B = assemble_bprime(n, T, p.lam, p.eta, net.snapshots)
    assert np.abs(op.to_dense() - B).max() < 1e-12
    assert np.abs(op.to_sparse().toarray() - B).max() < 1e-12
    x = np.random.default_rng(seed).normal(size=(4 * n * T, 3))
    assert np.abs(op.matvec(x) - B @ x).max() < 1e-12
    assert np.abs(op.matvec(x[:, 0]) - B @ x[:, 0]).max() < 1e-12


def test_single_snapshot_has_no_temporal_coupling():
    p, net, g = _instance(3, n=10, T=1, eta=0.7)
    B = build_operator(g, p).to_dense()
    N = 10
    Z, I = np.zeros((N, N)), np.eye(N)
    # with no temporal links only the -eta identity terms survive in the temporal rows
    assert np.allclose(B[2 * N:3 * N], np.hstack([Z, Z, Z, -0.7 * I]))
    assert np.allclose(B[3 * N:], np.hstack([Z, Z, -0.7 * I, Z]))
    assert not B[:2 * N, 3 * N:].any()
    # spatial block: the static reduced non-backtracking matrix (times lam)
    A = net.adjacency(0).toarray()
    D = np.diag(A.sum(axis=1))
    static = np.block([[A, -I], [D - I, Z]])
    assert np.allclose(B[:2 * N, :2 * N], p.lam * static)


def test_two_nodes_two_times_by_hand():
    p = ModelParams(n=2, T=2, k=2, eta=0.5, c=1.0, epsilon=0.2)
    net = DynamicNetwork(p, [np.array([[0, 1]]), np.empty((0, 2), dtype=int)])
    B = build_operator(build_spatiotemporal_graph(net), p).to_dense()
    assert B.shape == (16, 16)
    lam, eta = p.lam, p.eta
    # node-times 0,1 (t=0) share the edge; 2,3 (t=1) are isolated
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = 1
    At = np.zeros((4, 4))
    At[0, 2] = At[2, 0] = At[1, 3] = At[3, 1] = 1
    D = np.diag([1.0, 1, 0, 0])
    I = np.eye(4)
    expect = np.zeros((16, 16))
    expect[0:4, 0:4] = lam * A
    expect[0:4, 4:8] = -lam * I
    expect[0:4, 8:12] = lam * A
    expect[4:8, 0:4] = lam * (D - I)
    expect[4:8, 8:12] = lam * D
    expect[8:12, 0:4] = eta * At
    expect[8:12, 8:12] = eta * At
    expect[8:12, 12:16] = -eta * I
    expect[12:16, 0:4] = eta * I
    expect[12:16, 8:12] = 0 * I
    assert np.array_equal(B, expect)


def test_empty_snapshots_spectrum_bounded_by_two_eta():
    p = ModelParams(n=5, T=6, k=2, eta=0.8, c=1.0, epsilon=0.3)
    net = DynamicNetwork(p, [np.empty((0, 2), dtype=int)] * 6)
    rep = full_spectrum(build_operator(build_spatiotemporal_graph(net), p))
    assert np.abs(rep.eigenvalues).max() <= 2 * 0.8 + 1e-9


def test_zero_operator_has_zero_spectrum():
    p, _, g = _instance(4, epsilon=1.0, eta=0.0)
    rep = full_spectrum(build_operator(g, p))
    assert np.abs(rep.eigenvalues).max() < 1e-12


def test_full_spectrum_size_limit():
    p, _, g = _instance(5, n=30, T=4)
    with pytest.raises(ValueError):
        full_spectrum(build_operator(g, p), limit=100)


def test_arpack_matches_dense(monkeypatch):
    p, _, g = _instance(6, n=40, T=2, c=4.0, epsilon=0.1, eta=0.5)
    op = build_operator(g, p)
    assert op.shape[0] <= 400
    dense = leading_real_eigenpairs(op, m=5)
    monkeypatch.setattr(spectral, "DENSE_SOLVER_LIMIT", 0)
    sparse = leading_real_eigenpairs(op, m=5, nev=20)
    ev = np.linalg.eigvals(op.to_dense())
    for a in sparse:
        assert np.min(np.abs(ev - a.eigenvalue)) < 1e-6
    dv = [a.eigenvalue.real for a in dense]
    sv = [a.eigenvalue.real for a in sparse]
    assert sv[:3] == pytest.approx(dv[:3], abs=1e-6)


def test_full_spectrum_matches_independent_oracles():
    p, net, g = _instance(7, n=4, T=2, c=1.5)
    op = build_operator(g, p)
    B = assemble_bprime(p.n, p.T, p.lam, p.eta, net.snapshots)
    ev = full_spectrum(op).eigenvalues
    assert ev.size == 32
    # power sums are well conditioned even where eigenvalues are defective
    Bj = np.eye(32)
    for j in range(1, 11):
        Bj = Bj @ B
        assert np.sum(ev**j).real == pytest.approx(np.trace(Bj), rel=1e-6, abs=1e-6)
    # well separated eigenvalues match the roots of the characteristic polynomial
    roots = np.roots(np.poly(B))
    for z in ev:
        gap = np.sort(np.abs(ev - z))[1]
        if gap > 1e-2:
            assert np.min(np.abs(roots - z)) < 1e-6


def test_residuals_small_at_scale():
    p, _, g = _instance(8, n=512, T=10, c=16.0, epsilon=0.3, eta=0.5)
    pairs = leading_real_eigenpairs(build_operator(g, p), m=14, nev=22)
    assert pairs
    for a in pairs:
        assert a.residual / abs(a.eigenvalue) < 1e-8


def test_sign_rule():
    vec = np.concatenate([[0.5, 0.1, -0.2, -0.7], np.zeros(12)])
    pair = EigenPair(2.0, vec, True, False, snapshot_coherence=0.0)
    part = spectral_partition([pair], 2, 4, 1)
    assert part.labels.tolist() == [0, 0, 1, 1]
    flipped = spectral_partition([EigenPair(2.0, -vec, True, False)], 2, 4, 1)
    assert overlap(part.labels, flipped.labels, 2).overlap == 1.0


def test_only_ferromagnetic_means_not_found():
    vec = np.concatenate([np.ones(4), np.zeros(12)])
    pair = EigenPair(2.0, vec, True, is_ferromagnetic(vec[:4]), snapshot_coherence=1.0)
    part = spectral_partition([pair], 2, 4, 1)
    assert not part.found and part.labels is None


def test_ferromagnetic_and_coherence_flags():
    assert is_ferromagnetic([1.0, 2.0, 1e-12 * -1, 3.0])
    assert not is_ferromagnetic([1.0, -2.0, 3.0])
    assert not is_ferromagnetic(np.zeros(3))
    # two snapshots of constant but opposite sign: a temporal harmonic
    assert snapshot_coherence([1, 2, 1, -1, -2, -1], 3) == pytest.approx(1.0)
    assert snapshot_coherence([1, -1, 1, -1], 2) == pytest.approx(0.0)


def test_kmeans_partition_for_three_groups():
    p, net, g = _instance(9, n=300, T=3, k=3, c=8.0, epsilon=0.05, eta=0.6)
    part = spectral_cluster(g, p, seed=0)
    assert part.found and len(part.eigenvalues) == 2
    assert overlap(net.trajectory.flat(), part.labels, 3).overlap > 0.5


def test_detectable_instance_partition():
    p, net, g = _instance(0, n=300, T=5, c=3.0, epsilon=0.05, eta=0.5)
    part = spectral_cluster(g, p, seed=0)
    truth = net.trajectory.flat()
    ov = overlap(truth, part.labels, 2).overlap
    bp = overlap(truth, run_bp(g, p, seed=1).partition, 2).overlap
    assert ov > 0.7
    assert abs(ov - bp) < 0.15


@pytest.mark.slow
def test_detectable_regime_mean_partition():
    p = ModelParams(n=300, T=5, k=2, eta=0.5, c=3.0, epsilon=0.05)
    scores = []
    for seed in range(12):
        net = generate(p, seed)
        part = spectral_cluster(build_spatiotemporal_graph(net), p, seed=0)
        scores.append(overlap(net.trajectory.flat(), part.labels, 2).overlap)
    assert np.mean(scores) > 0.7


def test_no_structure_no_informative_outlier():
    # lam = eta = 0: B' vanishes and nothing is found
    p, _, g = _instance(11, n=300, T=5, c=3.0, epsilon=1.0, eta=0.0)
    assert leading_real_eigenpairs(build_operator(g, p), m=4) == []
    assert not spectral_cluster(g, p).found
    # lam = 0 but eta > 0: only temporal structure, no community signal
    p, net, g = _instance(11, n=300, T=5, c=3.0, epsilon=1.0, eta=0.5)
    part = spectral_cluster(g, p)
    if part.found:
        assert abs(overlap(net.trajectory.flat(), part.labels, 2).overlap) < 0.05


@pytest.mark.parametrize("eps,detectable", [(0.3, True), (0.85, False)])
def test_stability_correspondence(eps, detectable):
    p, _, g = _instance(12, n=512, T=10, c=16.0, epsilon=eps, eta=0.5)
    margin = p.threshold().ks_margin
    assert abs(margin) > 0.3 and (margin > 0) == detectable
    pairs = leading_real_eigenpairs(build_operator(g, p), m=p.T + 4, nev=p.T + 12)
    found = any(a.informative and a.eigenvalue.real > 1 for a in pairs)
    assert found == detectable


@pytest.mark.parametrize("k,deltas,min_ratio", [
    (3, [1e-6 / 2**j for j in range(4)], 3.5),
    (2, [1e-2 / 2**j for j in range(4)], 7.0),  # the k=2 map is odd: cubic remainder
])
def test_linearization(k, deltas, min_ratio):
    p, _, g = _instance(13, n=40, T=4, k=k, c=3.0, epsilon=0.3, eta=0.6)
    B = build_operator(g, p).to_sparse()
    base = init_messages(g, p, 0.0, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    dirs = {}
    for name in ("spatial", "fwd", "bwd"):
        a = rng.normal(size=getattr(base, name).shape)
        dirs[name] = a - a.mean(axis=1, keepdims=True)
    field = np.full((p.T, k), p.c)  # the field at the factorized fixed point
    errs = []
    for d in deltas:
        s = base.copy()
        for name, a in dirs.items():
            getattr(s, name)[:] += d * a
        out = bp_sweep_sync(s, g, p, field=field, options=BpOptions(schedule="sync"))
        x = deviation_embedding(s, g, p)
        errs.append(np.abs(deviation_embedding(out, g, p) - B @ x).max())
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    assert min(ratios) >= min_ratio


@pytest.mark.parametrize("limit", [400, 0])
def test_uncoupled_snapshots_match_dense(monkeypatch, limit):
    # eta = 0 is solved snapshot by snapshot; compare with the full dense spectrum
    p, _, g = _instance(14, n=70, T=3, c=4.0, epsilon=0.2, eta=0.0)
    op = build_operator(g, p)
    ev = np.linalg.eigvals(op.to_dense())
    nev = 20
    top = ev[np.argsort(-np.abs(ev))[:nev]]
    expect = sorted((z.real for z in top if abs(z.imag) <= 1e-8 * abs(z)), key=lambda x: -abs(x))
    monkeypatch.setattr(spectral, "DENSE_SOLVER_LIMIT", limit)
    pairs = leading_real_eigenpairs(op, m=nev, nev=nev)
    got = [a.eigenvalue.real for a in pairs]
    assert len(got) == len(expect)
    assert got == pytest.approx(expect, abs=1e-7)
    for a in pairs:
        assert a.residual < 1e-7
        assert not a.eigenvector[2 * op.nT:].any()


def test_restart_cap_keeps_converged_pairs(monkeypatch):
    p, _, g = _instance(15, n=200, T=4, c=4.0, epsilon=0.6, eta=0.3)
    op = build_operator(g, p)
    monkeypatch.setattr(spectral, "DENSE_SOLVER_LIMIT", 0)
    full = leading_real_eigenpairs(op, m=6, nev=14)
    capped = leading_real_eigenpairs(op, m=6, nev=14, max_iters=1)
    assert len(capped) <= len(full)
    ev = np.linalg.eigvals(op.to_dense())
    for a in capped:
        assert np.min(np.abs(ev - a.eigenvalue)) < 1e-6
