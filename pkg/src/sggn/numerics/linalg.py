"""Symmetric eigenproblems: dense solves and Lanczos for the top of the spectrum."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError

SYMMETRY_TOL = 1e-8


def sym_eigen(matrix):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise ContractError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return vals, vecs


def lanczos(matvec, dim, k, iters=None, rng=None, tol=1e-10):
    """Top-``k`` Ritz values of a symmetric operator, full reorthogonalization.

    Returns the ``k`` largest Ritz values in ascending order.
    """
    if k < 1:
        raise ContractError("k must be positive")
    iters = min(dim, iters if iters is not None else max(2 * k + 20, 40))
    rng = rng if rng is not None else np.random.default_rng(0)
    basis = np.zeros((iters, dim))
    alpha = np.zeros(iters)
    beta = np.zeros(iters)
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    n = 0
    for j in range(iters):
        basis[j] = q
        w = np.asarray(matvec(q), dtype=np.float64)
        alpha[j] = q @ w
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w -= basis[: j + 1].T @ (basis[: j + 1] @ w)
        n = j + 1
        b = np.linalg.norm(w)
        if b < tol or n == iters:
            break
        beta[j] = b
        q = w / b
    tri = np.diag(alpha[:n]) + np.diag(beta[: n - 1], 1) + np.diag(beta[: n - 1], -1)
    ritz = np.linalg.eigvalsh(tri)
    return ritz[-min(k, n):]
