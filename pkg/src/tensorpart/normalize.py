"""Per-slice symmetric degree normalization of adjacency tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import SparseTensor3


@dataclass
class DegreeProfile:
    """Degree vectors of every 3-slice.

    Attributes
    ----------
    degrees : ndarray, shape (n, m)
        ``degrees[k, i]`` is the row sum of slice ``k`` at row ``i``.
    isolated : list of ndarray
        Zero-degree row indices per slice.
    warnings : list of str
        Human-readable notes, e.g. about empty slices.
    """

    degrees: np.ndarray
    isolated: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def empty_slices(self):
        return [k for k in range(self.degrees.shape[0]) if not np.any(self.degrees[k])]

    def to_dict(self):
        return {
            "degrees": self.degrees.tolist(),
            "isolated": [(np.asarray(x) + 1).tolist() for x in self.isolated],
            "empty_slices": [k + 1 for k in self.empty_slices],
            "warnings": list(self.warnings),
        }


def degree_profile(A):
    """Row sums of every slice, taken over the full symmetric view."""
    m, _, n = A.dims
    deg = np.zeros(n * m)
    np.add.at(deg, A.subs[:, 2] * m + A.subs[:, 0], A.vals)
    deg = deg.reshape(n, m)
    isolated = [np.flatnonzero(deg[k] == 0) for k in range(n)]
    return DegreeProfile(deg, isolated)


def normalize_slices(A):
    """Scale every slice ``B`` to ``D^{-1/2} B D^{-1/2}`` with ``D = diag(B e)``.

    Rows with zero degree get a zero scaling factor, which leaves them (and
    empty slices) unchanged.

    Returns
    -------
    B : SparseTensor3
        Normalized tensor, still (1,2)-symmetric.
    profile : DegreeProfile
        Degrees of the input slices.
    """
    if not A.sym12:
        raise ValueError("normalize_slices needs a (1,2)-symmetric tensor")
    if not A.is_nonnegative():
        raise ValueError("normalize_slices needs a nonnegative tensor")
    profile = degree_profile(A)
    for k in profile.empty_slices:
        profile.warnings.append(f"slice {k + 1} is empty and was left unchanged")
    deg = profile.degrees
    with np.errstate(divide="ignore"):
        scale = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    i, j, k = A.subs[:, 0], A.subs[:, 1], A.subs[:, 2]
    vals = A.vals * scale[k, i] * scale[k, j]
    # Symmetric scaling can differ in the last bit between (i,j) and (j,i).
    vals = _symmetrize_values(A, vals)
    return A.with_values(vals), profile


def _symmetrize_values(A, vals):
    m = A.dims[0]
    key = (A.subs[:, 2] * m + A.subs[:, 0]) * m + A.subs[:, 1]
    mkey = (A.subs[:, 2] * m + A.subs[:, 1]) * m + A.subs[:, 0]
    mirror = np.searchsorted(key, mkey)
    lower = A.subs[:, 0] > A.subs[:, 1]
    out = vals.copy()
    out[lower] = vals[mirror[lower]]
    return out


def verify_normalization(A, max_iter=200, tol=1e-10):
    """Dominant eigenvalue estimate of every slice by power iteration.

    The iteration runs on ``B + s I`` with ``s`` the largest absolute row sum,
    which makes the spectrum nonnegative so the largest eigenvalue dominates.
    The estimate is the Rayleigh quotient of the final iterate. Empty slices
    report 0.
    """
    m, _, n = A.dims
    out = np.zeros(n)
    for k in range(n):
        B = A.slice_matrix(k)
        if B.nnz == 0:
            continue
        shift = float(np.max(np.abs(B).sum(axis=1)))
        x = np.ones(m) / np.sqrt(m)
        lam = 0.0
        for _ in range(max_iter):
            y = B @ x + shift * x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                break
            y /= ny
            new = float(y @ (B @ y))
            done = abs(new - lam) <= tol * max(1.0, abs(new))
            x, lam = y, new
            if done:
                break
        out[k] = lam
    return out
