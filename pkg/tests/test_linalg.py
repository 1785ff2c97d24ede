import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from shopdispatch.linalg import NumericalError, jacobi_eigh, pinv, round_robin, svd, sym_eig_smallest


def random_pair(rng, n, cond=10.0):
    A = rng.standard_normal((n, n))
    A = A + A.T
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    B = Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T
    return A, 0.5 * (B + B.T)


def count_below(A, B, sigma):
    """Sylvester inertia: eigenvalues of (A, B) below sigma = negative pivots of LDL(A - sigma B)."""
    _, D, _ = scipy.linalg.ldl(A - sigma * B)
    neg, i, n = 0, 0, len(D)
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0:
            blk = D[i:i + 2, i:i + 2]
            det = blk[0, 0] * blk[1, 1] - blk[0, 1] * blk[1, 0]
            neg += 1 if det < 0 else (2 if blk[0, 0] + blk[1, 1] < 0 else 0)
            i += 2
        else:
            neg += D[i, i] < 0
            i += 1
    return neg


def bisection_eigenvalues(A, B):
    n = len(A)
    bound = np.abs(A).sum() * np.abs(np.linalg.inv(B)).sum() + 1.0
    out = []
    for j in range(n):
        lo, hi = -bound, bound
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if count_below(A, B, mid) > j:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-13 * max(1.0, abs(mid)):
                break
        out.append(0.5 * (lo + hi))
    return np.array(out)


def test_round_robin_covers_each_pair_once():
    for n in range(1, 10):
        pairs = [(int(a), int(b)) for p, q in round_robin(n) for a, b in zip(p, q)]
        assert sorted(pairs) == [(a, b) for a in range(n) for b in range(a + 1, n)]
        for p, q in round_robin(n):
            assert len(set(p) | set(q)) == 2 * len(p)  # disjoint within a round


def test_eig_small_examples():
    w, _ = sym_eig_smallest(np.diag([3.0, 1.0, 2.0]), np.eye(3), 2, regularize=False)
    assert np.allclose(w, [1, 2])
    w, V = sym_eig_smallest(np.array([[2.0, 1.0], [1.0, 2.0]]), np.eye(2), regularize=False)
    assert np.allclose(w, [1, 3])
    assert abs(abs(V[:, 0] @ np.array([1, -1])) / np.sqrt(2) - 1) < 1e-12
    assert abs(abs(V[:, 1] @ np.array([1, 1])) / np.sqrt(2) - 1) < 1e-12


@pytest.mark.parametrize("n", [2, 6, 11, 20])
def test_generalized_eig_against_bisection(n, rng):
    A, B = random_pair(rng, n)
    w, V = sym_eig_smallest(A, B, regularize=False)
    assert np.all(np.diff(w) >= 0)
    scale = np.abs(A).max() + np.abs(w).max() * np.abs(B).max()
    assert np.abs(A @ V - B @ V * w).max() <= 1e-8 * scale
    assert np.abs(V.T @ B @ V - np.eye(n)).max() <= 1e-8
    assert np.abs(w - bisection_eigenvalues(A, B)).max() <= 1e-8 * max(1.0, np.abs(w).max())


def test_ridge_and_singular_b():
    A = np.diag([1.0, 2.0])
    w, _ = sym_eig_smallest(A, np.diag([1.0, 0.0]))
    assert np.isfinite(w).all()
    with pytest.raises(NumericalError):
        sym_eig_smallest(A, np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        sym_eig_smallest(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        sym_eig_smallest(A, k=3)


def test_jacobi_deterministic_and_ordered(rng):
    A, _ = random_pair(rng, 9)
    w1, V1 = jacobi_eigh(A)
    w2, V2 = jacobi_eigh(A)
    assert np.array_equal(w1, w2) and np.array_equal(V1, V2)
    assert np.allclose(w1, np.linalg.eigvalsh(A), atol=1e-12 * np.abs(A).max())
    with pytest.raises(ValueError):
        jacobi_eigh(np.zeros((2, 3)))


def penrose(A, P):
    return max(np.abs(A @ P @ A - A).max(), np.abs(P @ A @ P - P).max(),
               np.abs((A @ P).T - A @ P).max(), np.abs((P @ A).T - P @ A).max())


def test_pinv_examples():
    assert np.allclose(pinv(np.eye(3)), np.eye(3))
    assert np.allclose(pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    assert np.array_equal(pinv(np.zeros((2, 3))), np.zeros((3, 2)))


@pytest.mark.parametrize("shape,rank", [((5, 3), 3), ((3, 5), 3), ((6, 6), 4), ((8, 4), 2), ((20, 20), 20)])
def test_pinv_penrose(shape, rank, rng):
    for _ in range(5):
        A = rng.standard_normal((shape[0], rank)) @ rng.standard_normal((rank, shape[1]))
        assert penrose(A, pinv(A)) <= 1e-8


def test_pinv_involution(rng):
    A = rng.standard_normal((7, 4))
    assert np.abs(pinv(pinv(A)) - A).max() <= 1e-7


def test_svd_examples(rng):
    _, S, _ = svd(np.diag([3.0, 1.0]))
    assert np.allclose(S, [3, 1])
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    assert np.allclose(svd(Q)[1], 1.0)


@pytest.mark.parametrize("shape", [(4, 6), (6, 4), (7, 7), (30, 3)])
def test_svd_against_gram_oracle(shape, rng):
    A = rng.standard_normal(shape)
    U, S, V = svd(A)
    assert np.abs(U * S @ V.T - A).max() <= 1e-8
    k = min(shape)
    assert np.abs(U.T @ U - np.eye(k)).max() <= 1e-10 and np.abs(V.T @ V - np.eye(k)).max() <= 1e-10
    gram = np.sort(np.linalg.eigvalsh(A.T @ A if shape[0] >= shape[1] else A @ A.T))[::-1]
    assert np.allclose(S ** 2, gram, atol=1e-9 * gram[0])
    assert np.all(np.diff(S) <= 0) and np.all(S >= 0)


def test_svd_rank_deficient_has_orthonormal_u(rng):
    A = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
    U, S, V = svd(A)
    assert np.abs(U * S @ V.T - A).max() <= 1e-10
    assert np.abs(U.T @ U - np.eye(5)).max() <= 1e-10
    with pytest.raises(ValueError):
        svd(np.zeros(3))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 2 ** 32 - 1))
def test_property_generalized_eig(n, seed):
    rng = np.random.default_rng(seed)
    A, B = random_pair(rng, n)
    k = int(rng.integers(1, n + 1))
    w, V = sym_eig_smallest(A, B, k, regularize=False)
    scale = np.abs(A).max() + np.abs(w).max() * np.abs(B).max()
    assert np.abs(A @ V - B @ V * w).max() <= 1e-8 * scale
    assert np.abs(V.T @ B @ V - np.eye(k)).max() <= 1e-8
    assert np.all(np.diff(w) >= 0)


@settings(max_examples=25, deadline=None)
@given(m=st.integers(1, 12), n=st.integers(1, 12), seed=st.integers(0, 2 ** 32 - 1))
def test_property_pinv(m, n, seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, min(m, n) + 1))
    A = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    assert penrose(A, pinv(A)) <= 1e-8 * max(1.0, np.abs(A).max() ** 2)
