"""Dense linear algebra for the alignment solver.

Jacobi methods with round-robin (parallel) ordering: each round rotates
``n/2`` disjoint index pairs at once, so a round is a couple of vectorised
column/row updates instead of ``n/2`` Python-level rotations.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

EPS = np.finfo(float).eps


class NumericalError(np.linalg.LinAlgError):
    """Factorisation or iteration failure."""


def round_robin(n: int):
    """Yield ``(p, q)`` index arrays covering every pair once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    for _ in range(m - 1):
        top, bot = players[: m // 2], players[m // 2:][::-1]
        pairs = [(min(a, b), max(a, b)) for a, b in zip(top, bot) if a < n and b < n]
        if pairs:
            p, q = map(np.array, zip(*pairs))
            yield p, q
        players = [players[0], players[-1]] + players[1:-1]


def _tangent(ratio):
    """Smaller root of t^2 + 2 t ratio - 1 = 0, safe for huge ``ratio``."""
    sign = np.where(ratio >= 0, 1.0, -1.0)
    big = np.abs(ratio) > 1e150
    safe = np.where(big, 1.0, ratio)
    t = sign / (np.abs(safe) + np.sqrt(safe * safe + 1.0))
    return np.where(big, 0.5 / np.where(big, ratio, 1.0), t)


def _rotation(app, aqq, apq):
    """Cosine/sine that annihilate the (p, q) entry of a symmetric 2x2 block."""
    c = np.ones_like(apq)
    s = np.zeros_like(apq)
    nz = apq != 0
    t = _tangent((aqq[nz] - app[nz]) / (2.0 * apq[nz]))
    c[nz] = 1.0 / np.sqrt(t * t + 1.0)
    s[nz] = t * c[nz]
    return c, s


def jacobi_eigh(A, tol: float = EPS, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix, eigenvalues ascending."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n > 1:
        floor = EPS * EPS * np.abs(A).max()
        for _ in range(max_sweeps):
            rotated = False
            for p, q in round_robin(n):
                apq = A[p, q]
                active = np.abs(apq) > np.maximum(tol * np.sqrt(np.abs(A[p, p] * A[q, q])), floor)
                if not np.any(active):
                    continue
                rotated = True
                c, s = _rotation(A[p, p], A[q, q], np.where(active, apq, 0.0))
                Ap, Aq = A[:, p], A[:, q]
                A[:, p], A[:, q] = Ap * c - Aq * s, Ap * s + Aq * c
                Ap, Aq = A[p, :], A[q, :]
                A[p, :], A[q, :] = c[:, None] * Ap - s[:, None] * Aq, s[:, None] * Ap + c[:, None] * Aq
                Vp, Vq = V[:, p], V[:, q]
                V[:, p], V[:, q] = Vp * c - Vq * s, Vp * s + Vq * c
            if not rotated:
                break
        else:
            raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def _orthonormal_completion(U: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace the columns of U not flagged ``good`` by an orthonormal complement."""
    m = U.shape[0]
    basis = [U[:, j] for j in np.flatnonzero(good)]
    out = U.copy()
    candidates = iter(np.eye(m))
    for j in np.flatnonzero(~good):
        for e in candidates:
            v = e.copy()
            for _ in range(2):
                for b in basis:
                    v -= np.dot(b, v) * b
            norm = np.linalg.norm(v)
            if norm > 0.5:
                v /= norm
                basis.append(v)
                out[:, j] = v
                break
    return out


def svd(A, tol: float = EPS, max_sweeps: int = 100):
    """Thin SVD ``A = U @ diag(S) @ V.T`` by one-sided Jacobi; ``S`` descending."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("svd expects a 2-D array")
    m, n = A.shape
    if m < n:
        V, S, U = svd(A.T, tol, max_sweeps)
        return U, S, V
    G = A.copy()
    V = np.eye(n)
    # column pairs whose inner product is below this are rounding noise
    floor = (EPS * np.linalg.norm(A)) ** 2
    if n > 1:
        for _ in range(max_sweeps):
            rotated = False
            for p, q in round_robin(n):
                Gp, Gq = G[:, p], G[:, q]
                alpha = np.einsum("ij,ij->j", Gp, Gp)
                beta = np.einsum("ij,ij->j", Gq, Gq)
                gamma = np.einsum("ij,ij->j", Gp, Gq)
                active = np.abs(gamma) > np.maximum(tol * np.sqrt(alpha * beta), floor)
                if not np.any(active):
                    continue
                rotated = True
                c = np.ones(len(p))
                s = np.zeros(len(p))
                t = _tangent((beta[active] - alpha[active]) / (2.0 * gamma[active]))
                c[active] = 1.0 / np.sqrt(1.0 + t * t)
                s[active] = c[active] * t
                G[:, p], G[:, q] = Gp * c - Gq * s, Gp * s + Gq * c
                Vp, Vq = V[:, p], V[:, q]
                V[:, p], V[:, q] = Vp * c - Vq * s, Vp * s + Vq * c
            if not rotated:
                break
        else:
            raise NumericalError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")
    S = np.linalg.norm(G, axis=0)
    order = np.argsort(-S, kind="stable")
    S, G, V = S[order], G[:, order], V[:, order]
    good = S > (S[0] if len(S) else 0.0) * m * EPS
    U = np.zeros_like(G)
    U[:, good] = G[:, good] / S[good]
    if not np.all(good):
        U = _orthonormal_completion(U, good)
    return U, S, V


def pinv(A, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse; singular values below ``tol * s_max`` count as zero."""
    A = np.asarray(A, dtype=float)
    U, S, V = svd(A)
    if tol is None:
        tol = max(A.shape) * EPS
    cutoff = tol * (S[0] if len(S) else 0.0)
    inv = np.zeros_like(S)
    keep = S > cutoff
    inv[keep] = 1.0 / S[keep]
    return (V * inv) @ U.T


def ridge(B) -> float:
    B = np.asarray(B)
    return 1e-8 * np.trace(B) / B.shape[0]


def sym_eig_smallest(A, B=None, k: int | None = None, regularize: bool = True):
    """The ``k`` smallest eigenpairs of ``A v = lambda B v``, eigenvalues ascending.

    ``B`` gets a ridge of ``1e-8 * trace(B) / dim`` before its Cholesky
    factorisation; eigenvectors come back B-orthonormal (for the ridged B).
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    scale = max(1.0, np.abs(A).max(initial=0.0))
    if A.shape != (n, n) or np.abs(A - A.T).max(initial=0.0) > 1e-9 * scale:
        raise ValueError("A must be square and symmetric")
    k = n if k is None else k
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}")
    if B is None:
        w, V = jacobi_eigh(A)
        return w[:k], V[:, :k]
    B = np.asarray(B, dtype=float)
    B = 0.5 * (B + B.T)
    if regularize:
        B = B + ridge(B) * np.eye(n)
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"B is not positive definite (condition estimate {np.linalg.cond(B):.3e})") from exc
    C = solve_triangular(L, solve_triangular(L, A, lower=True).T, lower=True)
    w, Y = jacobi_eigh(0.5 * (C + C.T))
    V = solve_triangular(L.T, Y[:, :k], lower=False)
    return w[:k], V
