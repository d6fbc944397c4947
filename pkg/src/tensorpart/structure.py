"""Indicator vectors, structure tensors and reducibility classification.

A converged rank-(2,2,r3) approximation ``(U, U, W) . F`` of a (near-)reducible
tensor has factors that are, up to an orthogonal 2x2 rotation, in indicator
form: each column is supported on one block of indices. ``extract_indicators``
recovers that rotation, ``structure_tensor`` applies it to the core, and
``partition`` runs the rank scan and assembles a ``PartitionReport``.

Rotation recovery for a tall factor
-----------------------------------
Rows are sorted and split into a top block ``T`` and a bottom block ``B``.
The 2x2 matrix ``N`` holds the block column norms, signed by the dominant
entry of each block column; for exact indicator structure ``N`` is
orthogonal. The rotation ``[[c, -s], [s, c]]`` that diagonalizes ``N`` has
``(c, s)`` in the null space of ``[[n12, -n11], [n21, n22]]``; its smallest
singular value ``sigma_min`` measures the distance from indicator form (0 for
exact structure, at most 1 in general).

After rotation the two indicator columns are complementary, so the
difference ``(x0 - x1) / sqrt(2)`` is positive on one block and negative on
the other. Rows are re-sorted by that contrast, the rotation is recomputed
once on the refined split, and the final cut is the contrast's sign change.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lowrank import ApproxResult, InitSpec, hooi_sym
from .normalize import verify_normalization
from .tensor import Permutation, SparseTensor3, multi_multiply

PATTERNS = (
    "DiagSlices_12Reducible",
    "BlockDiag3_FullySeparable",
    "AntiDiag_Bipartite",
    "Mixed_12Reducible",
    "ThreeReducible",
)
IRREDUCIBLE = "Irreducible"

# (specific, general): a core with the specific zero pattern also has the general one.
_IMPLIES = {
    ("BlockDiag3_FullySeparable", "DiagSlices_12Reducible"),
    ("BlockDiag3_FullySeparable", "Mixed_12Reducible"),
    ("BlockDiag3_FullySeparable", "ThreeReducible"),
    ("DiagSlices_12Reducible", "Mixed_12Reducible"),
    ("AntiDiag_Bipartite", "ThreeReducible"),
}

SCORE_THRESHOLD = 0.35
RUNNER_UP_FACTOR = 0.5
DEFAULT_RANKS = ((2, 2, 1), (2, 2, 2), (2, 2, 3))


@dataclass
class FactorRotation:
    """Indicator-form rotation of one 2-column factor."""

    perm: Permutation
    Q: np.ndarray
    indicator: np.ndarray  # reordered factor times Q
    contrast: np.ndarray  # reordered (x0 - x1) / sqrt(2)
    cut: int
    sigma_min: float
    singular_values: np.ndarray


@dataclass
class IndicatorExtraction:
    perm12: Permutation
    perm3: Permutation
    Q1: np.ndarray
    Q3: np.ndarray
    indicator_U: np.ndarray
    indicator_W: np.ndarray
    sigma_min_U: float
    sigma_min_W: Optional[float]
    cut12: int
    cut3: Optional[int]
    contrast_U: np.ndarray
    contrast_W: Optional[np.ndarray]
    singular_values_U: np.ndarray = field(default_factory=lambda: np.zeros(0))
    singular_values_W: Optional[np.ndarray] = None


@dataclass
class StructureTensor:
    data: np.ndarray
    pattern: str
    scores: dict


def _sign_change_column(X):
    """Index of the column whose positive and negative parts are most balanced."""
    balance = []
    for c in range(X.shape[1]):
        col = X[:, c]
        pos = float(np.sum(col[col > 0] ** 2))
        neg = float(np.sum(col[col < 0] ** 2))
        balance.append(min(pos, neg))
    return int(np.argmax(balance)), max(balance)


def _descending_order(v):
    # Stable sort on -v keeps the original order among ties.
    return np.argsort(-v, kind="stable")


def _signed_block_norms(X, cut):
    N = np.zeros((2, 2))
    for b, rows in enumerate((X[:cut], X[cut:])):
        for c in range(2):
            col = rows[:, c]
            if col.size == 0:
                continue
            dom = col[np.argmax(np.abs(col))]
            N[b, c] = np.linalg.norm(col) * (1.0 if dom >= 0 else -1.0)
    return N


def _rotation_from_split(X, cut, method="norms"):
    """Rotation ``Q`` and the singular values measuring distance from indicator form."""
    if method == "norms":
        N = _signed_block_norms(X, cut)
        Uhat = np.array([[N[0, 1], -N[0, 0]], [N[1, 0], N[1, 1]]])
        _, sv, Vt = np.linalg.svd(Uhat)
        c, s = Vt[-1]
        # Column 0 should carry the top block; swap if the rotation landed the other way.
        Q = np.array([[c, -s], [s, c]])
        R = N @ Q
        if abs(R[0, 1]) + abs(R[1, 0]) > abs(R[0, 0]) + abs(R[1, 1]):
            Q = Q[:, ::-1]
    elif method == "lsq":
        # Minimize ||T q1||^2 + ||B q0||^2 over q0 = (c, s), q1 = (-s, c).
        T, B = X[:cut], X[cut:]
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        M = J.T @ (T.T @ T) @ J + B.T @ B
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        c, s = V[:, 0]
        Q = np.array([[c, -s], [s, c]])
        # The smallest eigenvalue is a squared residual; take the norm directly
        # instead of its square root, which would lose half the digits.
        resid = np.hypot(np.linalg.norm(T @ Q[:, 1]), np.linalg.norm(B @ Q[:, 0]))
        sv = np.array([np.sqrt(max(w[1], 0.0)), resid])
    else:
        raise ValueError(f"unknown rotation method {method!r}")
    Y = X @ Q
    for c in range(2):
        dom = Y[np.argmax(np.abs(Y[:, c])), c]
        if dom < 0:
            Q[:, c] = -Q[:, c]
    return Q, sv


def _positive_count(v):
    return int(np.count_nonzero(v > 0))


def rotate_to_indicator(X, method="norms"):
    """Rotation taking a 2-column orthonormal factor to approximate indicator form.

    Parameters
    ----------
    X : ndarray, shape (p, 2)
    method : {"norms", "lsq"}
        ``"norms"`` solves the 2x2 null-vector problem built from signed
        block column norms. ``"lsq"`` picks the rotation minimizing the mass
        outside the two diagonal blocks; its ``sigma_min`` is the norm of
        that remaining mass.

    Returns
    -------
    FactorRotation
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("indicator extraction needs a factor with exactly 2 columns")
    p = X.shape[0]
    col, minority = _sign_change_column(X)
    key = X[:, col] if minority > 0 else np.abs(X[:, 0]) - np.abs(X[:, 1])
    order = _descending_order(key)
    cut = _positive_count(key)
    if cut in (0, p):
        key = np.abs(X[:, 0]) - np.abs(X[:, 1])
        order = _descending_order(key)
        cut = min(max(_positive_count(key), 1), p - 1)

    for _ in range(2):
        Xs = X[order]
        Q, sv = _rotation_from_split(Xs, cut, method)
        contrast_all = (X @ Q) @ np.array([1.0, -1.0]) / np.sqrt(2.0)
        order = _descending_order(contrast_all)
        cut = min(max(_positive_count(contrast_all), 1), p - 1)
    Xs = X[order]
    Q, sv = _rotation_from_split(Xs, cut, method)
    indicator = Xs @ Q
    contrast = indicator @ np.array([1.0, -1.0]) / np.sqrt(2.0)
    # Keep the order consistent with the final rotation.
    reorder = _descending_order(contrast)
    if not np.array_equal(reorder, np.arange(p)):
        order = order[reorder]
        indicator = indicator[reorder]
        contrast = contrast[reorder]
    cut = min(max(_positive_count(contrast), 1), p - 1)
    return FactorRotation(
        perm=Permutation.from_order(order),
        Q=Q,
        indicator=indicator,
        contrast=contrast,
        cut=cut,
        sigma_min=float(min(sv[-1], 1.0)),
        singular_values=sv,
    )


def extract_indicators(result, rotation="norms"):
    """Indicator-form rotations for ``U`` (and ``W`` when it has two columns).

    Parameters
    ----------
    result : ApproxResult
        A rank-(2, 2, r3) approximation.
    rotation : {"norms", "lsq"}
        See ``rotate_to_indicator``.

    Returns
    -------
    IndicatorExtraction
        ``Q3`` is the identity and ``perm3`` the identity when ``r3 != 2``.
    """
    U, W = result.U, result.W
    if U.shape[1] != 2:
        raise ValueError(f"indicator extraction needs r1 = 2, got r1 = {U.shape[1]}")
    ru = rotate_to_indicator(U, rotation)
    r3 = W.shape[1]
    if r3 == 2:
        rw = rotate_to_indicator(W, rotation)
        perm3, Q3, ind_w = rw.perm, rw.Q, rw.indicator
        sig_w, cut3, con_w, sv_w = rw.sigma_min, rw.cut, rw.contrast, rw.singular_values
    else:
        perm3 = Permutation.identity(W.shape[0])
        Q3 = np.eye(r3)
        ind_w = W.copy()
        sig_w = cut3 = con_w = sv_w = None
    return IndicatorExtraction(
        perm12=ru.perm,
        perm3=perm3,
        Q1=ru.Q,
        Q3=Q3,
        indicator_U=ru.indicator,
        indicator_W=ind_w,
        sigma_min_U=ru.sigma_min,
        sigma_min_W=sig_w,
        cut12=ru.cut,
        cut3=cut3,
        contrast_U=ru.contrast,
        contrast_W=con_w,
        singular_values_U=ru.singular_values,
        singular_values_W=sv_w,
    )


# classification ---------------------------------------------------------


def pattern_scores(S):
    """Relative residual of each structural pattern for a 2 x 2 x r3 tensor.

    Each score is the Frobenius norm of the entries the pattern requires to
    vanish divided by ``||S||``; a pattern that needs at least two slices
    scores 1 on a single-slice tensor.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 3 or S.shape[:2] != (2, 2):
        raise ValueError("pattern scores need a 2 x 2 x r3 tensor")
    total = float(np.linalg.norm(S))
    r3 = S.shape[2]
    if total == 0.0:
        return {p: 1.0 for p in PATTERNS}
    sq = S * S
    off = sq[0, 1] + sq[1, 0]  # per slice
    diag = sq[0, 0] + sq[1, 1]
    scores = {
        "DiagSlices_12Reducible": np.sqrt(off.sum()),
        "AntiDiag_Bipartite": np.sqrt(diag.sum()),
        "ThreeReducible": np.sqrt(min(sq[0, 0].min(), sq[1, 1].min())),
    }
    if r3 >= 2:
        best = min(
            sq.sum() - sq[0, 0, k1] - sq[1, 1, k2]
            for k1 in range(r3)
            for k2 in range(r3)
            if k1 != k2
        )
        scores["BlockDiag3_FullySeparable"] = np.sqrt(max(best, 0.0))
        scores["Mixed_12Reducible"] = np.sqrt(off.min())
    else:
        scores["BlockDiag3_FullySeparable"] = total
        scores["Mixed_12Reducible"] = total
    return {p: float(min(scores[p] / total, 1.0)) for p in PATTERNS}


def classify(scores, threshold=SCORE_THRESHOLD, factor=RUNNER_UP_FACTOR):
    """Pick the most specific accepted pattern, or ``"Irreducible"``.

    A pattern is accepted when its score is at most ``threshold``. Among
    accepted patterns, ones implied by another accepted pattern are dropped
    in favor of the more specific one. The winner must also score at most
    ``factor`` times every pattern it is not nested with.
    """
    accepted = [p for p in PATTERNS if scores[p] <= threshold]
    if not accepted:
        return IRREDUCIBLE
    maximal = [p for p in accepted if not any((q, p) in _IMPLIES for q in accepted)]
    best = min(maximal, key=lambda p: (scores[p], PATTERNS.index(p)))
    rivals = [
        q for q in PATTERNS
        if q != best and (best, q) not in _IMPLIES and (q, best) not in _IMPLIES
    ]
    if rivals and scores[best] > factor * min(scores[q] for q in rivals):
        return IRREDUCIBLE
    return best


def structure_tensor(result, extraction, threshold=SCORE_THRESHOLD):
    """Rotate the core into indicator coordinates and classify it."""
    data = multi_multiply(result.core, extraction.Q1, extraction.Q1, extraction.Q3, transposed=True)
    scores = pattern_scores(data)
    return StructureTensor(data=data, pattern=classify(scores, threshold), scores=scores)


# partition --------------------------------------------------------------


@dataclass
class PartitionReport:
    perm12: Permutation
    perm3: Permutation
    cut12: int
    cut3: Optional[int]
    pattern: str
    structure: StructureTensor
    working_rank: tuple
    core_norms: dict
    converged: dict
    corner_norms: dict
    extraction: IndicatorExtraction
    results: dict
    warnings: list = field(default_factory=list)

    @property
    def working_result(self):
        return self.results[self.working_rank]

    def blocks(self):
        """Original row indices left and right of ``cut12``."""
        order = self.perm12.order
        return order[: self.cut12], order[self.cut12 :]

    def slice_groups(self):
        if self.cut3 is None:
            return None
        order = self.perm3.order
        return order[: self.cut3], order[self.cut3 :]

    def to_dict(self):
        ext = self.extraction
        left, right = self.blocks()
        out = {
            "pattern": self.pattern,
            "working_rank": list(self.working_rank),
            "core_norms": {_rank_key(r): v for r, v in self.core_norms.items()},
            "converged": {_rank_key(r): v for r, v in self.converged.items()},
            "cut12": self.cut12,
            "cut3": self.cut3,
            "perm12": (self.perm12.map + 1).tolist(),
            "perm3": (self.perm3.map + 1).tolist(),
            "block1": sorted((left + 1).tolist()),
            "block2": sorted((right + 1).tolist()),
            "sigma_min_U": ext.sigma_min_U,
            "sigma_min_W": ext.sigma_min_W,
            "singular_values_U": ext.singular_values_U.tolist(),
            "singular_values_W": None if ext.singular_values_W is None else ext.singular_values_W.tolist(),
            "Q1": ext.Q1.tolist(),
            "Q3": ext.Q3.tolist(),
            "structure_tensor": self.structure.data.tolist(),
            "scores": self.structure.scores,
            "corner_norms": self.corner_norms,
            "warnings": list(self.warnings),
        }
        groups = self.slice_groups()
        if groups is not None:
            out["slice_group1"] = sorted((groups[0] + 1).tolist())
            out["slice_group2"] = sorted((groups[1] + 1).tolist())
        return out


def _rank_key(rank):
    return ",".join(str(r) for r in rank)


def corner_norms(A, perm12, cut, corner_size=None):
    """Norms of the four corner subtensors of ``A`` reordered by ``perm12``.

    With ``corner_size=None`` the corners are the blocks induced by ``cut``
    (``top_left`` is rows and columns before the cut, across all slices).
    With an integer ``corner_size = k`` they use the first and last ``k``
    reordered indices instead.
    """
    pos = perm12.map
    i, j = pos[A.subs[:, 0]], pos[A.subs[:, 1]]
    m = A.dims[0]
    if corner_size is None:
        lo_i, lo_j = i < cut, j < cut
        hi_i, hi_j = ~lo_i, ~lo_j
    else:
        k = int(corner_size)
        if not 1 <= k <= m // 2:
            raise ValueError(f"corner_size must lie in 1..{m // 2}")
        lo_i, lo_j = i < k, j < k
        hi_i, hi_j = i >= m - k, j >= m - k
    sq = A.vals ** 2
    return {
        "top_left": float(np.sqrt(sq[lo_i & lo_j].sum())),
        "top_right": float(np.sqrt(sq[lo_i & hi_j].sum())),
        "bottom_left": float(np.sqrt(sq[hi_i & lo_j].sum())),
        "bottom_right": float(np.sqrt(sq[hi_i & hi_j].sum())),
    }


def refine_cut(A, perm12, cut, window):
    """Cut within ``window`` of ``cut`` minimizing the squared cross-block mass."""
    if window <= 0:
        return cut
    m = A.dims[0]
    pos = perm12.map
    i, j = pos[A.subs[:, 0]], pos[A.subs[:, 1]]
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    sel = lo < hi
    # An entry crosses cut c exactly when lo < c <= hi.
    diff = np.zeros(m + 2)
    np.add.at(diff, lo[sel] + 1, A.vals[sel] ** 2)
    np.add.at(diff, hi[sel] + 1, -(A.vals[sel] ** 2))
    cost = np.cumsum(diff)[: m + 1]
    cands = np.arange(max(1, cut - window), min(m - 1, cut + window) + 1)
    return int(cands[np.argmin(cost[cands])])


def scan_ranks(A, ranks=DEFAULT_RANKS, guard_iter=50, **solver_opts):
    """Solve at each rank from a nested start, guarded by a fresh start.

    The nested start reuses the previous rank's factors (padded with random
    orthonormal columns), which makes the objective nondecreasing along the
    scan. A fresh start, limited to ``guard_iter`` sweeps, replaces it when
    it converges to a larger objective; this catches a nested start trapped
    at a poor stationary point without paying for a fresh run that crawls.
    The first rank has no nested start and gets the full budget.
    """
    results = {}
    prev = None
    for rank in ranks:
        r1, _, r3 = rank
        if prev is None or prev.U.shape[1] > r1:
            best = hooi_sym(A, r1, r3, **solver_opts)
        else:
            best = hooi_sym(A, r1, r3, init=InitSpec("given", prev.U, prev.W), **solver_opts)
            opts = dict(solver_opts)
            opts["max_iter"] = min(opts.get("max_iter", guard_iter), guard_iter)
            fresh = hooi_sym(A, r1, r3, **opts)
            if fresh.converged and (fresh.objective > best.objective or not best.converged):
                best = fresh
        results[tuple(rank)] = best
        prev = best
    return results


def select_rank(core_norms, ranks, rel_gain=0.01):
    """Smallest rank whose core norm the next rank improves by at most ``rel_gain``."""
    for a, b in zip(ranks[:-1], ranks[1:]):
        fa, fb = core_norms[tuple(a)], core_norms[tuple(b)]
        if fa > 0 and fb / fa - 1.0 <= rel_gain:
            return tuple(a)
    return tuple(ranks[-1])


def partition(
    A,
    ranks=DEFAULT_RANKS,
    rel_gain=0.01,
    threshold=SCORE_THRESHOLD,
    refine=0,
    corner_size=None,
    check_normalization=True,
    rotation="norms",
    **solver_opts,
):
    """Rank scan, indicator extraction and classification of a tensor.

    Parameters
    ----------
    A : SparseTensor3
        Normalized (1,2)-symmetric tensor.
    ranks : sequence of (2, 2, r3)
        Ranks to scan, ascending in ``r3``.
    rel_gain : float
        Relative core-norm gain below which the next rank is not needed.
    threshold : float
        Score threshold for accepting a pattern.
    refine : int
        Half-width of the optional cut refinement window (0 disables it).
    corner_size : int, optional
        See ``corner_norms``.
    check_normalization : bool
        Warn when slices of a nonnegative input do not look normalized.
    rotation : {"norms", "lsq"}
        See ``rotate_to_indicator``.
    **solver_opts
        Passed to ``hooi_sym``.

    Returns
    -------
    PartitionReport
    """
    ranks = [tuple(int(x) for x in r) for r in ranks]
    if not ranks:
        raise ValueError("rank list is empty")
    for r in ranks:
        if len(r) != 3 or r[0] != 2 or r[1] != 2:
            raise ValueError(f"partition scans ranks of the form (2, 2, r3), got {r}")
    if any(b[2] <= a[2] for a, b in zip(ranks[:-1], ranks[1:])):
        raise ValueError("ranks must be ascending in r3")
    if not A.sym12:
        raise ValueError("partition needs a (1,2)-symmetric tensor")
    notes = []
    if check_normalization and A.is_nonnegative():
        lam = verify_normalization(A, max_iter=50, tol=1e-6)
        nonempty = lam[lam != 0]
        if nonempty.size and np.max(np.abs(nonempty - 1.0)) > 1e-3:
            msg = "input slices do not look normalized (top eigenvalue differs from 1)"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)

    results = scan_ranks(A, ranks, **solver_opts)
    norms = {r: res.objective for r, res in results.items()}
    working = select_rank(norms, ranks, rel_gain)
    res = results[working]
    ext = extract_indicators(res, rotation)
    st = structure_tensor(res, ext, threshold)
    cut12 = ext.cut12
    if refine:
        cut12 = refine_cut(A, ext.perm12, cut12, refine)
    corners = corner_norms(A, ext.perm12, cut12, corner_size)
    return PartitionReport(
        perm12=ext.perm12,
        perm3=ext.perm3,
        cut12=cut12,
        cut3=ext.cut3,
        pattern=st.pattern,
        structure=st,
        working_rank=working,
        core_norms=norms,
        converged={r: x.converged for r, x in results.items()},
        corner_norms=corners,
        extraction=ext,
        results=results,
        warnings=notes,
    )


# rank-2 block lemma check ----------------------------------------------


@dataclass
class LemmaVerdict:
    lhs: bool  # Z12 = 0 and rank(Z) = 2
    rhs: bool  # one of the structural classes holds
    klass: Optional[str]
    z12_norm: float
    sigma2: float
    agree: bool


def rank2_lemma_oracle(U, Asmall, m1, zero_tol=1e-12, rank_tol=1e-8, class_tol=1e-8):
    """Check the rank-2 block lemma on one instance.

    With ``Z = U A U^T`` split after row ``m1``, the lemma states that
    ``Z12 = 0`` and ``rank(Z) = 2`` hold exactly when one of three structures
    holds: ``U`` is block-indicator after a rotation that also diagonalizes
    ``A`` (``"gen"``), or ``U`` vanishes on the bottom (``"12"``) or top
    (``"22"``) block; in all cases ``rank(A) = 2``.

    The left side is tested with ``||Z12|| <= zero_tol`` and
    ``sigma_2(Z) >= rank_tol``; the classes are tested independently with
    ``class_tol``. ``agree`` requires the left side to imply a class, and a
    class to imply ``||Z12|| <= class_tol`` with rank 2.
    """
    U = np.asarray(U, dtype=np.float64)
    A = np.asarray(Asmall, dtype=np.float64)
    m = U.shape[0]
    if U.shape[1] != 2 or A.shape != (2, 2) or m < 3 or not 1 <= m1 < m:
        raise ValueError("need U (m x 2) with m >= 3, A (2 x 2) and 1 <= m1 < m")
    A = 0.5 * (A + A.T)
    Z = U @ A @ U.T
    z12 = float(np.linalg.norm(Z[:m1, m1:]))
    sz = np.linalg.svd(Z, compute_uv=False)
    sigma2 = float(sz[1])
    lhs = z12 <= zero_tol and sigma2 >= rank_tol

    sa = np.linalg.svd(A, compute_uv=False)
    rank_a2 = sa[1] >= class_tol
    top, bot = U[:m1], U[m1:]
    klass = None
    if rank_a2:
        if np.linalg.norm(bot) <= class_tol:
            klass = "12"
        elif np.linalg.norm(top) <= class_tol:
            klass = "22"
        else:
            _, st, vt = np.linalg.svd(top)
            _, sb, vb = np.linalg.svd(bot)
            rank1_t = st[0] > class_tol and (st.size < 2 or st[1] <= class_tol)
            rank1_b = sb[0] > class_tol and (sb.size < 2 or sb[1] <= class_tol)
            if rank1_t and rank1_b:
                a, b = vt[0], vb[0]
                if abs(a @ b) <= class_tol:
                    Q = np.column_stack([a, b])
                    Ahat = Q.T @ A @ Q
                    if abs(Ahat[0, 1]) <= class_tol * max(1.0, np.abs(A).max()):
                        klass = "gen"
    rhs = klass is not None
    agree = ((not lhs) or rhs) and ((not rhs) or (z12 <= class_tol and sigma2 >= class_tol))
    return LemmaVerdict(lhs, rhs, klass, z12, sigma2, agree)
