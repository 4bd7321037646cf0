"""Real-embedding helpers and eigen-solvers for complex Hermitian matrices.

A Hermitian V = A + iB maps to the real symmetric 2Kx2K matrix
[[A, -B], [B, A]] with the same eigenvalues (each doubled) and positive
semidefiniteness preserved, so every cone operation can run in real
arithmetic. Top eigenpairs come from power iteration with a cyclic-Jacobi
fallback for slowly separating spectra.
"""

from __future__ import annotations

import math

import numpy as np


def embed(v: np.ndarray) -> np.ndarray:
    """Complex Hermitian (K,K) -> real symmetric (2K,2K)."""
    a = v.real
    b = v.imag
    return np.block([[a, -b], [b, a]])


def unembed(m: np.ndarray) -> np.ndarray:
    """Inverse of embed (top-left + i * bottom-left block)."""
    k = m.shape[0] // 2
    return m[:k, :k] + 1j * m[k:, :k]


def hermitize(v: np.ndarray) -> np.ndarray:
    return 0.5 * (v + v.conj().T)


def jacobi_eigh(mat: np.ndarray, tol: float = 1e-13, max_sweeps: int = 60):
    """Cyclic (threshold) Jacobi eigendecomposition of a real symmetric matrix.

    Returns eigenvalues ascending and the matching orthonormal eigenvector
    columns. Rotations below the per-sweep threshold are skipped, which keeps
    nearly diagonal inputs cheap.
    """
    a = np.array(mat, dtype=float, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    vecs = np.eye(n)
    scale = max(float(np.abs(a).max()), 1e-300)

    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(a, 1) ** 2)))
        if off <= tol * scale * n:
            break
        thresh = off / (n * n)
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= thresh:
                    continue
                phi = 0.5 * math.atan2(2.0 * apq, a[q, q] - a[p, p])
                c = math.cos(phi)
                s = math.sin(phi)
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = a[q, p] = 0.0
                vp = vecs[:, p].copy()
                vq = vecs[:, q].copy()
                vecs[:, p] = c * vp - s * vq
                vecs[:, q] = s * vp + c * vq

    evals = np.diag(a).copy()
    order = np.argsort(evals)
    return evals[order], vecs[:, order]


def _power_iteration(mat: np.ndarray, tol: float, max_iter: int):
    """Dominant eigenpair of a real symmetric PSD matrix, or None if the
    iteration fails to separate within max_iter."""
    n = mat.shape[0]
    x = np.ones(n) / math.sqrt(n)
    x += 1e-3 * np.cos(np.arange(n))  # avoid starts orthogonal to the top space
    x /= np.linalg.norm(x)
    lam = 0.0
    scale = max(float(np.abs(mat).max()), 1e-300)
    for _ in range(max_iter):
        y = mat @ x
        lam = float(x @ y)
        resid = np.linalg.norm(y - lam * x)
        if resid <= tol * scale:
            return lam, x
        ny = np.linalg.norm(y)
        if ny <= 1e-300:
            return 0.0, x  # x is in the kernel of a PSD matrix: lam = 0 is exact
        x = y / ny
    return None


def top_eig_hermitian(v: np.ndarray, tol: float = 1e-12, max_iter: int = 200):
    """Largest eigenvalue and unit eigenvector of a complex Hermitian PSD
    matrix, via power iteration on the real embedding with Jacobi fallback."""
    m = embed(hermitize(v))
    res = _power_iteration(m, tol, max_iter)
    if res is None:
        evals, evecs = jacobi_eigh(m)
        lam = float(evals[-1])
        x = evecs[:, -1]
    else:
        lam, x = res
    k = v.shape[0]
    u = x[:k] + 1j * x[k:]
    nu = np.linalg.norm(u)
    if nu > 0:
        u = u / nu
    return lam, u


def is_posdef(v: np.ndarray, rel_floor: float = 0.0) -> bool:
    """Positive-definiteness test on the real embedding.

    With rel_floor > 0 the smallest eigenvalue must also clear
    rel_floor * largest, rejecting numerically singular matrices that a
    bare Cholesky would still accept.
    """
    if rel_floor > 0.0:
        w = np.linalg.eigvalsh(embed(hermitize(v)))
        return bool(w[0] > rel_floor * max(w[-1], 0.0))
    try:
        np.linalg.cholesky(embed(hermitize(v)))
        return True
    except np.linalg.LinAlgError:
        return False


def inv_hermitian(v: np.ndarray) -> np.ndarray:
    """Inverse of a Hermitian positive definite matrix via its embedding."""
    m = embed(hermitize(v))
    minv = np.linalg.solve(m, np.eye(m.shape[0]))
    return unembed(0.5 * (minv + minv.T))


def max_step_psd(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha with v + alpha*dv still PSD (v Hermitian PD).

    Computed from the minimum eigenvalue of L^-1 dv L^-H on the embedding;
    returns inf when dv never pushes v to the boundary. A marginally
    indefinite v (rounding at the cone boundary) is jittered just enough to
    factor.
    """
    m = embed(hermitize(v))
    dm = embed(hermitize(dv))
    n = m.shape[0]
    jitter = 0.0
    scale = max(float(np.trace(m)) / n, 1e-300)
    for _ in range(12):
        try:
            ell = np.linalg.cholesky(m + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter = scale * 1e-15 if jitter == 0.0 else jitter * 32.0
    else:
        return 0.0
    w = np.linalg.solve(ell, np.linalg.solve(ell, dm).T)
    lam_min = float(np.linalg.eigvalsh(0.5 * (w + w.T))[0])
    if lam_min >= 0.0:
        return math.inf
    return 1.0 / (-lam_min)
