import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from romcex.exceptions import DomainError
from romcex.linalg import sym_eigen
from romcex.parametric import (
    SnapshotSet,
    build_map,
    correlation_u,
    gram_kernel,
    kle,
    reconstruct,
    reconstruction_error,
    truncate_by_threshold,
)

from conftest import darcy_snapshots


def seeded_set(seed, n=5, m=4, weighted=True):
    rng = np.random.default_rng(seed)
    w = rng.random(m) + 0.1 if weighted else np.ones(m)
    return SnapshotSet(np.arange(m, dtype=float), rng.standard_normal((n, m)), w / w.sum())


def test_snapshot_validation():
    with pytest.raises(DomainError):
        SnapshotSet([0.0, 1.0], np.zeros((3, 2)), [0.3, 0.3])
    with pytest.raises(DomainError):
        SnapshotSet([0.0], np.zeros((3, 2)))
    s = SnapshotSet([0.0, 1.0], np.ones((3, 2)))
    assert s.weights.tolist() == [0.5, 0.5]


def test_build_map_examples():
    r = np.array([1.0, 2.0, 3.0])
    single = SnapshotSet([0.0], r.reshape(-1, 1), [1.0])
    assert np.allclose(build_map(single), r[None, :])
    assert np.all(build_map(SnapshotSet([0.0, 1.0], np.zeros((3, 2)))) == 0)
    s = seeded_set(1, 4, 3)
    rm = build_map(s)
    assert np.allclose(rm.T @ rm, correlation_u(s).c_u, atol=1e-12)


def test_correlation_examples():
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 3)))
    pair = correlation_u(SnapshotSet(np.arange(3.0), q))
    assert np.allclose(pair.c_q, np.eye(3) / 3)
    r = np.array([[1.0], [2.0]])
    one = correlation_u(SnapshotSet([0.0], r, [1.0]))
    ev = np.linalg.eigvalsh(one.c_u)
    assert np.isclose(ev.max(), 5.0) and abs(ev.min()) < 1e-14
    s = seeded_set(2)
    pair = correlation_u(s)
    assert abs(np.trace(pair.c_u) - np.trace(pair.c_q)) <= 1e-10


def test_gram_kernel_examples():
    assert np.allclose(gram_kernel(SnapshotSet(np.arange(3.0), np.eye(3))), np.eye(3))
    states = np.random.default_rng(3).standard_normal((4, 2))
    k = gram_kernel(SnapshotSet(np.arange(3.0), np.column_stack([states, states[:, 0]])))
    assert np.allclose(k[0], k[2])
    assert np.linalg.matrix_rank(k) == 2
    assert sym_eigen(gram_kernel(seeded_set(4, 5, 6))).values.min() >= -1e-10


def test_kle_rank_one():
    r = np.array([1.0, -2.0, 0.5])
    s = SnapshotSet(np.arange(4.0), np.outer(r, [1.0, 2.0, -1.0, 0.5]))
    b = kle(s)
    assert b.rank == 1
    assert np.allclose(reconstruct(b, 1), s.states, atol=1e-12)


def test_kle_orthonormal_uniform():
    q, _ = np.linalg.qr(np.random.default_rng(5).standard_normal((7, 4)))
    b = kle(SnapshotSet(np.arange(4.0), q))
    assert np.allclose(b.sigmas, 1 / np.sqrt(4))


def test_kle_sigmas_match_correlation_eigenvalues():
    s = seeded_set(6, 6, 4)
    b = kle(s)
    lam = np.sort(np.linalg.eigvalsh(correlation_u(s).c_u))[::-1][: b.rank]
    assert np.allclose(b.sigmas**2, lam, atol=1e-9)


def test_kle_param_functions_orthonormal():
    s = darcy_snapshots(n=8, n_samples=16)
    b = kle(s)
    gram = (b.param_functions * s.weights[:, None]).T @ b.param_functions
    assert np.allclose(gram, np.eye(b.rank), atol=1e-8)


def test_reconstruct_examples():
    s = seeded_set(7)
    b = kle(s)
    assert np.all(reconstruct(b, 0, k=1) == 0)
    assert np.allclose(reconstruct(b, b.rank, k=2), s.states[:, 2], atol=1e-8)
    for m in range(b.rank + 1):
        assert abs(reconstruction_error(s, b, m) - b.tail_energy(m)) <= 1e-8
    with pytest.raises(DomainError):
        reconstruct(b, b.rank + 1)
    with pytest.raises(DomainError):
        reconstruct(b, 1, k=99)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_tail_identity_property(n, m, seed):
    s = seeded_set(seed, n, m)
    b = kle(s)
    scale = max(1.0, s.energy())
    for r in range(b.rank + 1):
        assert abs(reconstruction_error(s, b, r) - b.tail_energy(r)) <= 1e-9 * scale


def test_truncate_by_threshold():
    b = kle(seeded_set(8, 6, 5))
    assert truncate_by_threshold(b, b.sigmas[0] * 1.01).rank == 0
    assert truncate_by_threshold(b, b.sigmas[-1]).rank == b.rank
    mid = 0.5 * (b.sigmas[1] + b.sigmas[2])
    assert truncate_by_threshold(b, mid).rank == int(np.sum(b.sigmas > mid)) == 2
    with pytest.raises(DomainError):
        truncate_by_threshold(b, 0.0)


def test_zero_states_give_empty_basis():
    b = kle(SnapshotSet(np.arange(2.0), np.zeros((3, 2))))
    assert b.rank == 0
