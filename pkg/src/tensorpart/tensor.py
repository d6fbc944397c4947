"""Sparse and small dense 3-tensors with multilinear products and contractions.

Sparse tensors are stored in coordinate form (``SparseTensor3``). Small dense
results (cores, projected unfoldings) are plain ``numpy`` arrays, and factor
matrices are plain 2-D arrays with orthonormal columns where required.

Modes are numbered 1, 2, 3 in the public API, matching the usual notation
``A x_1 U``. Internally arrays are zero-based.

Two spellings exist in the literature for multiplication by a transposed
factor, ``<A . U>`` and ``(U^T) . A``; both are the ``transposed=True`` case
here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import sparse

DENSIFY_LIMIT = 1_000_000

TensorLike = Union["SparseTensor3", np.ndarray]


class SparseTensor3:
    """Coordinate-format real 3-tensor of shape ``(m1, m2, n)``.

    Entries are canonicalized on construction: duplicates are summed, explicit
    zeros dropped, and the coordinate list sorted by ``(k, i, j)``. When
    ``sym12`` is set, both ``(i, j, k)`` and ``(j, i, k)`` are stored; a
    missing mirror is filled in, a conflicting one is rejected.

    Instances are immutable; all operations return new tensors.
    """

    __slots__ = ("dims", "subs", "vals", "sym12", "_agg")

    def __init__(self, dims, subs=None, vals=None, sym12=False):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {dims}")
        if subs is None:
            subs = np.zeros((0, 3), dtype=np.int64)
            vals = np.zeros(0)
        subs = np.asarray(subs, dtype=np.int64).reshape(-1, 3)
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if subs.shape[0] != vals.shape[0]:
            raise ValueError("subs and vals have different lengths")
        if not np.all(np.isfinite(vals)):
            raise ValueError("tensor values must be finite")
        if subs.size and (subs.min() < 0 or np.any(subs.max(axis=0) >= dims)):
            bad = np.flatnonzero(np.any((subs < 0) | (subs >= dims), axis=1))[0]
            raise ValueError(f"index {tuple(subs[bad])} out of range for dims {dims}")
        if sym12 and dims[0] != dims[1]:
            raise ValueError("a (1,2)-symmetric tensor needs dims[0] == dims[1]")

        subs, vals = _canonicalize(dims, subs, vals)
        if sym12:
            subs, vals = _complete_symmetric(dims, subs, vals)

        subs.setflags(write=False)
        vals.setflags(write=False)
        self.dims = dims
        self.subs = subs
        self.vals = vals
        self.sym12 = bool(sym12)
        self._agg = {}

    # construction -----------------------------------------------------

    @classmethod
    def from_dense(cls, array, sym12=None, tol=0.0):
        """Build from a dense array; ``sym12=None`` detects exact symmetry."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3:
            raise ValueError("expected a 3-dimensional array")
        mask = np.abs(array) > tol
        subs = np.argwhere(mask)
        vals = array[mask]
        if sym12 is None:
            sym12 = array.shape[0] == array.shape[1] and np.array_equal(
                array, array.transpose(1, 0, 2)
            )
        return cls(array.shape, subs, vals, sym12=sym12)

    @classmethod
    def from_slices(cls, slices, sym12=False):
        """Build from a sequence of (sparse or dense) 3-slices."""
        slices = list(slices)
        if not slices:
            raise ValueError("need at least one slice")
        m1, m2 = slices[0].shape
        parts_s, parts_v = [], []
        for k, s in enumerate(slices):
            c = sparse.coo_matrix(s)
            if c.shape != (m1, m2):
                raise ValueError(f"slice {k} has shape {c.shape}, expected {(m1, m2)}")
            parts_s.append(np.column_stack([c.row, c.col, np.full(c.nnz, k)]))
            parts_v.append(c.data)
        return cls((m1, m2, len(slices)), np.vstack(parts_s), np.concatenate(parts_v), sym12=sym12)

    def with_values(self, vals):
        """Same sparsity pattern, new values (zeros are dropped)."""
        return SparseTensor3(self.dims, self.subs, vals, sym12=self.sym12)

    # basic properties -------------------------------------------------

    @property
    def shape(self):
        return self.dims

    @property
    def nnz(self):
        return int(self.vals.size)

    def __repr__(self):
        flag = ", sym12" if self.sym12 else ""
        return f"SparseTensor3(dims={self.dims}, nnz={self.nnz}{flag})"

    def to_dense(self):
        out = np.zeros(self.dims)
        out[self.subs[:, 0], self.subs[:, 1], self.subs[:, 2]] = self.vals
        return out

    def norm(self):
        return float(np.sqrt(np.dot(self.vals, self.vals)))

    def is_nonnegative(self):
        return bool(np.all(self.vals >= 0))

    def is_symmetric(self):
        """Exact check of a(i,j,k) == a(j,i,k) on the stored entries."""
        if self.dims[0] != self.dims[1]:
            return False
        mirror = SparseTensor3(self.dims, self.subs[:, [1, 0, 2]], self.vals)
        return np.array_equal(mirror.subs, self.subs) and np.array_equal(mirror.vals, self.vals)

    def slice_matrix(self, k):
        """The k-th 3-slice (zero-based) as a CSR matrix."""
        lo, hi = np.searchsorted(self.subs[:, 2], [k, k + 1])
        s = self.subs[lo:hi]
        return sparse.csr_matrix((self.vals[lo:hi], (s[:, 0], s[:, 1])), shape=self.dims[:2])

    def slice_bounds(self):
        """Offsets into the coordinate list delimiting each 3-slice."""
        return np.searchsorted(self.subs[:, 2], np.arange(self.dims[2] + 1))

    def subtensor(self, rows=None, cols=None, slices=None):
        """Extract ``A[rows, cols, slices]`` with indices renumbered in the given order."""
        idx = []
        for mode, sel in enumerate((rows, cols, slices)):
            if sel is None:
                sel = np.arange(self.dims[mode])
            idx.append(np.asarray(sel, dtype=np.int64))
        keep = np.ones(self.nnz, dtype=bool)
        remap = []
        for mode, sel in enumerate(idx):
            table = np.full(self.dims[mode], -1, dtype=np.int64)
            table[sel] = np.arange(sel.size)
            remap.append(table)
            keep &= table[self.subs[:, mode]] >= 0
        s = self.subs[keep]
        new_subs = np.column_stack([remap[d][s[:, d]] for d in range(3)])
        sym = self.sym12 and rows is not None and cols is not None and np.array_equal(idx[0], idx[1])
        sym = sym or (self.sym12 and rows is None and cols is None)
        return SparseTensor3(tuple(len(x) for x in idx), new_subs, self.vals[keep], sym12=sym)

    def stacked(self):
        """CSR matrix ``S`` of shape ``(n*m1, m2)`` with ``S[k*m1 + i, j] = a(i, j, k)``.

        ``(S @ X).reshape(n, m1, -1)`` contracts mode 2 with ``X`` for every
        slice at once; cached per tensor.
        """
        S = self._agg.get("stacked")
        if S is None:
            m1, m2, n = self.dims
            rows = self.subs[:, 2] * m1 + self.subs[:, 0]
            S = sparse.csr_matrix((self.vals, (rows, self.subs[:, 1])), shape=(n * m1, m2))
            self._agg["stacked"] = S
        return S

    def aggregator(self, mode):
        """CSR matrix (dims[mode] x nnz) summing weighted entries per index of ``mode``.

        ``aggregator(mode) @ X`` computes ``sum_e vals[e] * X[e]`` grouped by
        the ``mode`` index of entry ``e``; cached per tensor.
        """
        agg = self._agg.get(mode)
        if agg is None:
            agg = sparse.csr_matrix(
                (self.vals, (self.subs[:, mode], np.arange(self.nnz))),
                shape=(self.dims[mode], self.nnz),
            )
            self._agg[mode] = agg
        return agg


def _canonicalize(dims, subs, vals):
    if subs.shape[0] == 0:
        return subs.copy(), vals.copy()
    m1, m2, _ = dims
    key = (subs[:, 2] * m1 + subs[:, 0]) * m2 + subs[:, 1]
    uniq, inv = np.unique(key, return_inverse=True)
    summed = np.bincount(inv.reshape(-1), weights=vals, minlength=uniq.size)
    nz = summed != 0
    uniq, summed = uniq[nz], summed[nz]
    j = uniq % m2
    rest = uniq // m2
    i = rest % m1
    k = rest // m1
    return np.column_stack([i, j, k]).astype(np.int64), summed.astype(np.float64)


def _complete_symmetric(dims, subs, vals):
    m, _, _ = dims
    key = (subs[:, 2] * m + subs[:, 0]) * m + subs[:, 1]
    mkey = (subs[:, 2] * m + subs[:, 1]) * m + subs[:, 0]
    pos = np.searchsorted(key, mkey)
    pos_c = np.minimum(pos, key.size - 1)
    present = key[pos_c] == mkey
    if np.any(present & (vals[pos_c] != vals)):
        bad = np.flatnonzero(present & (vals[pos_c] != vals))[0]
        i, j, k = subs[bad]
        raise ValueError(
            f"entries ({i}, {j}, {k}) and ({j}, {i}, {k}) differ; tensor is not (1,2)-symmetric"
        )
    missing = ~present
    if not np.any(missing):
        return subs, vals
    extra = subs[missing][:, [1, 0, 2]]
    return _canonicalize(dims, np.vstack([subs, extra]), np.concatenate([vals, vals[missing]]))


@dataclass(frozen=True)
class Permutation:
    """Bijection on ``{0, ..., size-1}``; ``map[i]`` is the new position of ``i``."""

    map: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.map, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(arr), np.arange(arr.size)):
            raise ValueError("permutation map is not a bijection")
        arr.setflags(write=False)
        object.__setattr__(self, "map", arr)

    @property
    def size(self):
        return int(self.map.size)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @classmethod
    def from_order(cls, order):
        """Permutation placing ``order[p]`` at position ``p``."""
        order = np.asarray(order, dtype=np.int64)
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        return cls(inv)

    @property
    def order(self):
        """Old index found at each new position (inverse map)."""
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.map.size)
        return inv

    def inverse(self):
        return Permutation(self.order)

    def compose(self, other):
        """Apply ``other`` first, then ``self``."""
        if other.size != self.size:
            raise ValueError("permutation sizes differ")
        return Permutation(self.map[other.map])

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.map, other.map)

    def __hash__(self):
        return hash(self.map.tobytes())


# products -------------------------------------------------------------


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def mode_multiply(A, M, mode, transposed=False, densify=DENSIFY_LIMIT):
    """Multiply every mode-``mode`` fiber of ``A`` by a matrix.

    With ``transposed=False`` the result is ``M . A`` (``M`` is ``p x l``);
    with ``transposed=True`` it is ``<A . M>``, i.e. multiplication by ``M^T``
    (``M`` is ``l x p``). The result is a dense array when it has at most
    ``densify`` entries, otherwise a ``SparseTensor3``.
    """
    d = _check_mode(mode)
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None] if transposed else M[None, :]
    Mt = M if transposed else M.T  # l x p
    dims = _dims(A)
    if Mt.shape[0] != dims[d]:
        raise ValueError(
            f"mode-{mode} product: factor contracts {Mt.shape[0]} rows, "
            f"tensor has {dims[d]} in mode {mode}"
        )
    p = Mt.shape[1]
    new_dims = list(dims)
    new_dims[d] = p
    new_dims = tuple(new_dims)

    if isinstance(A, np.ndarray):
        out = np.moveaxis(np.tensordot(A, Mt, axes=([d], [0])), -1, d)
        return out

    others = [o for o in range(3) if o != d]
    lin = A.subs[:, others[0]] * dims[others[1]] + A.subs[:, others[1]]
    uniq, inv = np.unique(lin, return_inverse=True)
    unf = sparse.csr_matrix(
        (A.vals, (inv.reshape(-1), A.subs[:, d])), shape=(uniq.size, dims[d])
    )
    prod = np.asarray(unf @ Mt)  # uniq x p
    if int(np.prod(new_dims)) <= densify:
        out = np.zeros((dims[others[0]] * dims[others[1]], p))
        out[uniq] = prod
        out = out.reshape(dims[others[0]], dims[others[1]], p)
        return np.moveaxis(out, -1, d)
    rows, cols = np.nonzero(prod)
    subs = np.empty((rows.size, 3), dtype=np.int64)
    subs[:, others[0]] = uniq[rows] // dims[others[1]]
    subs[:, others[1]] = uniq[rows] % dims[others[1]]
    subs[:, d] = cols
    return SparseTensor3(new_dims, subs, prod[rows, cols], sym12=A.sym12 and d == 2)


def multi_multiply(A, U, V, W, transposed=False, densify=DENSIFY_LIMIT):
    """Multiply in all three modes; ``None`` leaves a mode untouched.

    ``transposed=True`` with orthonormal factors yields the least-squares core
    ``<A . (U, V, W)>`` of the Tucker model ``(U, V, W) . core``.
    """
    factors = [U, V, W]
    dims = _dims(A)
    if isinstance(A, SparseTensor3) and transposed and all(f is not None for f in factors):
        mats = [np.asarray(f, dtype=np.float64) for f in factors]
        mats = [f[:, None] if f.ndim == 1 else f for f in mats]
        for mode, f in enumerate(mats):
            if f.shape[0] != dims[mode]:
                raise ValueError(
                    f"mode-{mode + 1} product: factor has {f.shape[0]} rows, "
                    f"tensor has {dims[mode]} in mode {mode + 1}"
                )
        ranks = [f.shape[1] for f in mats]
        if ranks[0] * ranks[1] * ranks[2] <= 4096:
            return _sparse_core(A, *mats)
    out = A
    for mode, f in enumerate(factors, start=1):
        if f is not None:
            out = mode_multiply(out, f, mode, transposed=transposed, densify=densify)
    return out


def _sparse_core(A, U, V, W):
    T = contract_mode2(A, V)
    return np.einsum("ia,kib,kc->abc", U, T, W, optimize=True)


def project_all_but(A, mode, X, Y):
    """Matricized product of ``A`` with ``X^T`` and ``Y^T`` in the two other modes.

    Returns ``M`` of shape ``(dims[mode], rx * ry)`` where ``X`` multiplies the
    lower-numbered remaining mode; column ``a * ry + b`` pairs column ``a`` of
    ``X`` with column ``b`` of ``Y``. This is the workhorse of HOOI sweeps.
    """
    d = _check_mode(mode)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    Y = Y[:, None] if Y.ndim == 1 else Y
    o1, o2 = [o for o in range(3) if o != d]
    dims = _dims(A)
    if X.shape[0] != dims[o1] or Y.shape[0] != dims[o2]:
        raise ValueError(f"factor row counts do not match tensor dims {dims}")
    rx, ry = X.shape[1], Y.shape[1]
    if isinstance(A, SparseTensor3) and d != 1:
        if d == 0:
            T = contract_mode2(A, X)
            return np.einsum("kia,kb->iab", T, Y, optimize=True).reshape(dims[0], rx * ry)
        T = contract_mode2(A, Y)
        return np.einsum("ia,kib->kab", X, T, optimize=True).reshape(dims[2], rx * ry)
    if isinstance(A, np.ndarray):
        letters = ["i", "j", "k"]
        spec = "ijk," + letters[o1] + "a," + letters[o2] + "b->" + letters[d] + "ab"
        return np.einsum(spec, A, X, Y, optimize=True).reshape(dims[d], rx * ry)
    kr = (X[A.subs[:, o1]][:, :, None] * Y[A.subs[:, o2]][:, None, :]).reshape(A.nnz, rx * ry)
    return np.asarray(A.aggregator(d) @ kr)


def contract_mode2(A, X):
    """``A x_2 X^T`` as a dense array of shape ``(n, m1, rx)`` (slice-major)."""
    X = np.asarray(X, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    m1, _, n = A.dims
    return np.asarray(A.stacked() @ X).reshape(n, m1, X.shape[1])


# inner products and contractions -------------------------------------


def _dims(A):
    if isinstance(A, SparseTensor3):
        return A.dims
    return tuple(np.shape(A))


def _linear(A):
    m1, m2, _ = A.dims
    return (A.subs[:, 2] * m1 + A.subs[:, 0]) * m2 + A.subs[:, 1]


def inner(A, B):
    """Frobenius inner product of two tensors of equal dimensions."""
    if _dims(A) != _dims(B):
        raise ValueError(f"inner product needs equal dims, got {_dims(A)} and {_dims(B)}")
    if isinstance(A, SparseTensor3) and isinstance(B, SparseTensor3):
        la, lb = _linear(A), _linear(B)
        _, ia, ib = np.intersect1d(la, lb, assume_unique=True, return_indices=True)
        return float(np.dot(A.vals[ia], B.vals[ib]))
    if isinstance(A, SparseTensor3):
        A, B = B, A
    if isinstance(B, SparseTensor3):
        A = np.asarray(A)
        return float(np.dot(B.vals, A[B.subs[:, 0], B.subs[:, 1], B.subs[:, 2]]))
    return float(np.vdot(np.asarray(A), np.asarray(B)))


def norm(A):
    """Frobenius norm."""
    if isinstance(A, SparseTensor3):
        return A.norm()
    return float(np.linalg.norm(np.asarray(A).ravel()))


def _normalize_modes(modes):
    if isinstance(modes, (int, np.integer)):
        modes = [modes]
    modes = list(modes)
    if len(modes) == 1 and modes[0] < 0:
        modes = [m for m in (1, 2, 3) if m != -modes[0]]
    for m in modes:
        _check_mode(m)
    if len(set(modes)) != len(modes) or not modes:
        raise ValueError(f"invalid contraction modes {modes}")
    return sorted(modes)


def _unfold_sparse(A, rows_modes):
    """Sparse matrix with rows indexed by ``rows_modes`` and columns by the rest."""
    dims = _dims(A)
    col_modes = [m for m in range(3) if m not in rows_modes]
    if isinstance(A, SparseTensor3):
        subs, vals = A.subs, A.vals
    else:
        arr = np.asarray(A, dtype=np.float64)
        subs = np.argwhere(arr != 0)
        vals = arr[arr != 0]
    r = np.zeros(subs.shape[0], dtype=np.int64)
    for m in rows_modes:
        r = r * dims[m] + subs[:, m]
    c = np.zeros(subs.shape[0], dtype=np.int64)
    for m in col_modes:
        c = c * dims[m] + subs[:, m]
    nr = int(np.prod([dims[m] for m in rows_modes])) if rows_modes else 1
    nc = int(np.prod([dims[m] for m in col_modes])) if col_modes else 1
    return sparse.csr_matrix((vals, (r, c)), shape=(nr, nc)), [dims[m] for m in col_modes]


def partial_contract(A, B, modes):
    """Contracted product ``<A, B>_modes``.

    ``modes`` lists the contracted modes (1-based), or a single negative mode
    ``-k`` meaning "all modes but k". The result's axes are the non-contracted
    modes of ``A`` followed by those of ``B``; contracting all three modes
    gives the scalar inner product.
    """
    modes = _normalize_modes(modes)
    da, db = _dims(A), _dims(B)
    for m in modes:
        if da[m - 1] != db[m - 1]:
            raise ValueError(
                f"contracted mode {m} has size {da[m - 1]} in the first tensor "
                f"and {db[m - 1]} in the second"
            )
    if len(modes) == 3:
        return inner(A, B)
    idx = [m - 1 for m in modes]
    if isinstance(A, np.ndarray) and isinstance(B, np.ndarray):
        return np.tensordot(A, B, axes=(idx, idx))
    ua, rest_a = _unfold_sparse(A, idx)
    ub, rest_b = _unfold_sparse(B, idx)
    prod = ua.T @ ub
    shape = tuple(rest_a) + tuple(rest_b)
    if int(np.prod(shape)) <= DENSIFY_LIMIT:
        return np.asarray(prod.todense()).reshape(shape)
    return prod.tocoo()


def permute(A, p12, p3):
    """Apply a (1,2)-symmetric index permutation and a mode-3 permutation."""
    if p12.size != A.dims[0] or p12.size != A.dims[1]:
        raise ValueError(f"mode-(1,2) permutation has size {p12.size}, tensor dims {A.dims}")
    if p3.size != A.dims[2]:
        raise ValueError(f"mode-3 permutation has size {p3.size}, tensor has {A.dims[2]} slices")
    s = A.subs
    subs = np.column_stack([p12.map[s[:, 0]], p12.map[s[:, 1]], p3.map[s[:, 2]]])
    return SparseTensor3(A.dims, subs, A.vals, sym12=A.sym12)


def tucker_to_dense(core, factors: Sequence[np.ndarray]):
    """Dense ``(U, V, W) . core``."""
    return np.einsum("abc,ia,jb,kc->ijk", core, *factors, optimize=True)


def reconstruction_error(A, core, factors: Iterable[np.ndarray]):
    """``||A - (U, V, W) . core||`` for tensors small enough to densify."""
    dense = A.to_dense() if isinstance(A, SparseTensor3) else np.asarray(A)
    return float(np.linalg.norm((dense - tucker_to_dense(core, list(factors))).ravel()))
