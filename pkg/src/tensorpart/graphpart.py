"""Spectral bipartition of a single normalized adjacency matrix.

This is the matrix baseline: take the two leading eigenvectors of
``D^{-1/2} A D^{-1/2}``, order the vertices by the second one and cut where
the cost is smallest near its sign change.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .tensor import Permutation


@dataclass
class MatrixPartition:
    """Result of ``spectral_bipartition``.

    ``perm`` orders vertices by decreasing ``v2``; ``cut`` vertices come
    first. ``cost_profile`` maps each scanned cut to its cost.
    """

    eigvals: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    perm: Permutation
    cut: int
    cost_profile: dict = field(default_factory=dict)
    iterations: int = 0
    converged: bool = True

    def blocks(self):
        order = self.perm.order
        return order[: self.cut], order[self.cut :]

    def to_dict(self):
        left, right = self.blocks()
        return {
            "eigvals": self.eigvals.tolist(),
            "v1": self.v1.tolist(),
            "v2": self.v2.tolist(),
            "perm": (self.perm.map + 1).tolist(),
            "cut": self.cut,
            "block1": sorted((left + 1).tolist()),
            "block2": sorted((right + 1).tolist()),
            "cost_profile": {str(k): v for k, v in self.cost_profile.items()},
            "iterations": self.iterations,
            "converged": self.converged,
        }


def top_eigenpairs(B, k=2, tol=1e-10, max_iter=500, seed=0, guard=6):
    """Leading ``k`` eigenpairs of a symmetric matrix by subspace iteration.

    The iteration runs on ``B + s I`` with ``s`` the largest absolute row sum,
    so the wanted eigenvalues are the largest in magnitude, and finishes each
    step with a Rayleigh-Ritz projection. The block carries ``guard`` extra
    vectors, which speeds convergence when eigenvalue ``k`` is close to
    eigenvalue ``k + 1``. Stops when the ``k`` wanted Ritz residuals
    ``||B x - lambda x||`` are at most ``tol``.

    Returns
    -------
    vals : ndarray, shape (k,)
        Descending.
    vecs : ndarray, shape (m, k)
    iterations : int
    converged : bool
    """
    B = sparse.csr_matrix(B, dtype=np.float64)
    m = B.shape[0]
    k = min(k, m)
    p = min(m, k + guard)
    shift = float(np.max(np.abs(B).sum(axis=1))) if B.nnz else 0.0
    rng = np.random.default_rng(seed)
    deg = np.asarray(B.sum(axis=1)).ravel()
    X = np.column_stack([np.sqrt(np.abs(deg)) + 1e-3, rng.standard_normal((m, p - 1))])
    X, _ = np.linalg.qr(X)
    vals = np.zeros(p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        BX = B @ X
        H = X.T @ BX
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        order = np.argsort(-w)
        vals, V = w[order], V[:, order]
        X = X @ V
        BX = BX @ V
        res = np.linalg.norm(BX[:, :k] - X[:, :k] * vals[:k], axis=0)
        if np.all(res <= tol):
            converged = True
            break
        X, _ = np.linalg.qr(BX + shift * X)
    return vals[:k], X[:, :k], it, converged


def _align_degenerate(vals, X, deg, gap_tol=1e-8):
    """Within a degenerate top eigenspace, make ``v1`` the closest vector to ``sqrt(d)``."""
    if vals.size < 2 or abs(vals[0] - vals[1]) > gap_tol * max(1.0, abs(vals[0])):
        return X
    target = np.sqrt(np.abs(deg))
    c = X[:, :2].T @ target
    if not np.any(c):
        return X
    c /= np.linalg.norm(c)
    R = np.array([[c[0], -c[1]], [c[1], c[0]]])
    out = X.copy()
    out[:, :2] = X[:, :2] @ R
    return out


def _cut_costs(B, order, cuts, cost):
    pos = np.empty_like(order)
    pos[order] = np.arange(order.size)
    C = sparse.coo_matrix(B)
    pi, pj = pos[C.row], pos[C.col]
    deg = np.asarray(B.sum(axis=1)).ravel()
    vol_total = deg.sum()
    cum_vol = np.concatenate([[0.0], np.cumsum(deg[order])])
    lo, hi = np.minimum(pi, pj), np.maximum(pi, pj)
    sel = lo < hi
    w = C.data[sel]
    diff = np.zeros(order.size + 2)
    # Each stored entry is one orientation; the cut weight counts the edge once.
    np.add.at(diff, lo[sel] + 1, w / 2.0)
    np.add.at(diff, hi[sel] + 1, -w / 2.0)
    weight = np.cumsum(diff)
    out = {}
    for c in cuts:
        # Differences of a running sum can leave -1e-16 where the cut is empty.
        cw = max(float(weight[c]), 0.0)
        if cost == "cut":
            out[int(c)] = cw
        elif cost == "conductance":
            denom = min(cum_vol[c], vol_total - cum_vol[c])
            out[int(c)] = cw / denom if denom > 0 else float("inf")
        else:
            raise ValueError(f"unknown cost {cost!r}")
    return out


def spectral_bipartition(matrix, window=10, cost="cut", tol=1e-10, max_iter=500, seed=0):
    """Two-way spectral partition of a symmetric nonnegative matrix.

    Parameters
    ----------
    matrix : array_like or sparse matrix, shape (m, m)
        Normalized adjacency matrix of an undirected graph.
    window : int
        Cuts within ``window`` positions of the sign change of ``v2`` are
        scanned.
    cost : {"cut", "conductance"}
        ``"cut"`` is the total weight of crossing edges; ``"conductance"``
        divides it by the smaller side's volume.
    tol, max_iter, seed
        Eigensolver controls, see ``top_eigenpairs``.

    Returns
    -------
    MatrixPartition
    """
    B = sparse.csr_matrix(matrix, dtype=np.float64)
    m = B.shape[0]
    if B.shape != (m, m) or m < 2:
        raise ValueError("need a square matrix of size at least 2")
    if B.nnz == 0 or not np.any(B.data):
        raise ValueError("the zero matrix has no spectral partition")
    if abs(B - B.T).max() > 1e-12 * abs(B).max():
        raise ValueError("matrix is not symmetric")
    if B.data.min() < 0:
        raise ValueError("matrix has negative entries")
    deg = np.asarray(B.sum(axis=1)).ravel()
    vals, X, its, conv = top_eigenpairs(B, 2, tol=tol, max_iter=max_iter, seed=seed)
    if abs(vals[0] - 1.0) > 1e-6:
        warnings.warn("matrix does not look normalized (top eigenvalue differs from 1)", stacklevel=2)
    X = _align_degenerate(vals, X, deg)
    v1, v2 = X[:, 0].copy(), X[:, 1].copy()
    if v1.sum() < 0:
        v1 = -v1
    if v2[np.argmax(np.abs(v2))] < 0:
        v2 = -v2
    order = np.argsort(-v2, kind="stable")
    sign_change = int(np.count_nonzero(v2 > 0))
    lo = max(1, sign_change - window)
    hi = min(m - 1, sign_change + window)
    if lo > hi:
        lo = hi = min(max(sign_change, 1), m - 1)
    profile = _cut_costs(B, order, range(lo, hi + 1), cost)
    cut = min(profile, key=lambda c: (profile[c], abs(c - sign_change), c))
    return MatrixPartition(
        eigvals=vals,
        v1=v1,
        v2=v2,
        perm=Permutation.from_order(order),
        cut=cut,
        cost_profile=profile,
        iterations=its,
        converged=conv,
    )


def normalize_matrix(B):
    """``D^{-1/2} B D^{-1/2}`` for a single symmetric nonnegative matrix."""
    B = sparse.csr_matrix(B, dtype=np.float64)
    d = np.asarray(B.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        s = np.where(d > 0, 1.0 / np.sqrt(d), 0.0)
    D = sparse.diags(s)
    return sparse.csr_matrix(D @ B @ D)


def planted_graph(n1, n2, p=None, cross_edges=4, seed=0):
    """Two random graphs joined by a few edges, as a normalized sparse matrix.

    Returns ``(B, labels)`` with ``labels[i]`` the block of vertex ``i``. The
    random blocks are resampled until each is connected.
    """
    rng = np.random.default_rng(seed)
    from scipy.sparse.csgraph import connected_components

    def block(size):
        q = p if p is not None else min(1.0, 3 * np.log(size) / size)
        while True:
            upper = np.triu(rng.random((size, size)) < q, k=1)
            adj = (upper | upper.T).astype(float)
            if connected_components(sparse.csr_matrix(adj), directed=False)[0] == 1:
                return adj

    m = n1 + n2
    A = np.zeros((m, m))
    A[:n1, :n1] = block(n1)
    A[n1:, n1:] = block(n2)
    if cross_edges:
        pairs = rng.choice(n1 * n2, size=cross_edges, replace=False)
        i, j = pairs // n2, n1 + pairs % n2
        A[i, j] = A[j, i] = 1.0
    labels = (np.arange(m) >= n1).astype(np.int64)
    return normalize_matrix(A), labels
