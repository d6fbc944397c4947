"""Cyclic Jacobi eigensolver for small dense symmetric matrices."""

from __future__ import annotations

import numpy as np

MAX_SIZE = 64


def small_sym_eig(G, tol=1e-14, max_sweeps=100):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    G : array_like, shape (n, n)
        Symmetric matrix with ``n <= 64``. It is symmetrized on entry.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm is at most
        ``tol * ||G||``.
    max_sweeps : int
        Safety cap on the number of cyclic sweeps.

    Returns
    -------
    w : ndarray, shape (n,)
        Eigenvalues in descending order.
    V : ndarray, shape (n, n)
        Orthonormal eigenvectors, ``V[:, i]`` pairs with ``w[i]``.
    """
    G = np.array(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    n = G.shape[0]
    if n > MAX_SIZE:
        raise ValueError(f"small_sym_eig handles n <= {MAX_SIZE}, got {n}")
    a = 0.5 * (G + G.T)
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 0 or scale == 0.0:
        return np.zeros(n), v
    target = tol * scale
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
