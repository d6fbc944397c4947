"""Best rank-(r1, r1, r3) approximation of (1,2)-symmetric tensors.

The solver is a symmetric higher-order orthogonal iteration (HOOI) that
maximizes ``||A x_1 U^T x_2 U^T x_3 W^T||`` over column-orthonormal ``U`` and
``W``. One sweep updates ``U`` from the leading left singular vectors of
``M1 = A x_2 U^T x_3 W^T`` (matricized to ``m x r1*r3``) and then ``W`` from
``M3 = A x_1 U^T x_2 U^T`` (``n x r1^2``). Singular vectors come from the
eigendecomposition of the small Gram matrix, so no ``m x m`` problem is formed.

The ``W`` update is an exact block maximization. The ``U`` update is not,
because ``U`` enters twice; when a sweep would lower the objective the solver
falls back to a projected gradient step on the Grassmann manifold with
backtracking, so the recorded objective never decreases.

Stationarity is measured in projected form. With ``F1 = U^T M1`` and
``F3 = W^T M3`` the residuals are::

    rho1 = ||(I - U U^T) M1 F1^T|| / ||F||^2
    rho3 = ||(I - W W^T) M3 F3^T|| / ||F||^2

Both are the norms of the Riemannian gradients divided by ``||F||^2``, and
vanish exactly at stationary points (equivalently, the contractions of the
complement tensors with the core are zero for every orthonormal complement).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .jacobi import small_sym_eig
from .tensor import SparseTensor3, contract_mode2, multi_multiply, project_all_but

# Singular values come from a Gram matrix, so anything below about
# sqrt(eps) times the largest one is indistinguishable from zero.
BREAKDOWN_RTOL = 1e-7
GAP_RTOL = 1e-8
# Decreases this small are rounding noise in the objective, not real descent.
ROUNDOFF_RTOL = 1e-14
THREADS_ENV = "TENSORPART_THREADS"


@dataclass
class InitSpec:
    """How to start the iteration.

    ``method="rank111"`` runs one rank-(1,1,1) pass from the vector of slice
    row sums and pads with random orthonormal columns. ``"random"`` draws
    random orthonormal factors. ``"given"`` starts from ``U`` (and ``W`` if
    supplied), padding missing columns randomly.
    """

    method: str = "rank111"
    U: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None


@dataclass
class StationarityReport:
    rho1: float
    rho3: float

    def max(self):
        return max(self.rho1, self.rho3)

    def to_dict(self):
        return {"rho1": self.rho1, "rho3": self.rho3}


@dataclass
class ApproxResult:
    """Outcome of a rank-(r1, r1, r3) solve.

    ``core`` equals ``multi_multiply(A, U, U, W, transposed=True)``;
    ``objective_history`` holds ``||core||`` after initialization and after
    every sweep and is nondecreasing.
    """

    U: np.ndarray
    W: np.ndarray
    core: np.ndarray
    objective_history: list
    stationarity: StationarityReport
    iterations: int
    converged: bool
    breakdown: bool = False
    achieved_rank: tuple = ()
    degenerate_gap: bool = False
    safeguard_steps: int = 0
    seed: Optional[int] = None

    @property
    def rank(self):
        return (self.U.shape[1], self.U.shape[1], self.W.shape[1])

    @property
    def objective(self):
        return float(np.linalg.norm(self.core))

    def to_dict(self):
        return {
            "rank": list(self.rank),
            "objective": self.objective,
            "U": self.U.tolist(),
            "W": self.W.tolist(),
            "core": self.core.tolist(),
            "objective_history": [float(x) for x in self.objective_history],
            "stationarity": self.stationarity.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "breakdown": self.breakdown,
            "achieved_rank": list(self.achieved_rank),
            "degenerate_gap": self.degenerate_gap,
            "safeguard_steps": self.safeguard_steps,
        }


# small helpers -------------------------------------------------------


def orthonormalize(X):
    """Thin QR with the sign convention ``diag(R) >= 0``."""
    Q, R = np.linalg.qr(X)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def complete_basis(X, r, rng):
    """Extend orthonormal columns ``X`` to ``r`` columns with random directions."""
    m = X.shape[0]
    out = X
    while out.shape[1] < r:
        Z = rng.standard_normal((m, r - out.shape[1]))
        Z -= out @ (out.T @ Z)
        Z -= out @ (out.T @ Z)
        out = orthonormalize(np.hstack([out, Z]))
    return out


def canonicalize_signs(X):
    """Flip columns so each column's largest-magnitude entry is positive."""
    X = np.array(X, dtype=np.float64)
    if X.ndim == 1:
        return X if X[np.argmax(np.abs(X))] >= 0 else -X
    idx = np.argmax(np.abs(X), axis=0)
    s = np.sign(X[idx, np.arange(X.shape[1])])
    s[s == 0] = 1.0
    return X * s


def _leading_left(M, r, rng):
    """Top-``r`` left singular vectors of a tall ``M`` via its Gram matrix.

    Returns ``(X, sv, rank)`` with the singular values of ``M`` in descending
    order and the numerical rank found among the first ``r``.
    """
    G = M.T @ M
    w, V = small_sym_eig(G)
    w = np.maximum(w, 0.0)
    sv = np.sqrt(w)
    top = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv[:r] > BREAKDOWN_RTOL * top)) if top > 0 else 0
    X = M @ V[:, :rank] / sv[:rank] if rank else np.zeros((M.shape[0], 0))
    if rank:
        X = orthonormalize(X)
    if rank < r:
        X = complete_basis(X, r, rng)
    return X, sv, rank


def _gap_degenerate(sv, r):
    if sv.size <= r or sv[0] == 0:
        return False
    return (sv[r - 1] - sv[r]) < GAP_RTOL * sv[0]


def _as_sparse(A):
    if isinstance(A, SparseTensor3):
        return A
    return SparseTensor3.from_dense(np.asarray(A), sym12=True)


def _m1(A, U, W, T=None):
    T = contract_mode2(A, U) if T is None else T
    return np.einsum("kia,kc->iac", T, W, optimize=True).reshape(A.dims[0], -1)


def _m3(A, U, T=None):
    T = contract_mode2(A, U) if T is None else T
    return np.einsum("ia,kib->kab", U, T, optimize=True).reshape(A.dims[2], -1)


def _core_from_m3(M3, W, r1):
    F3 = W.T @ M3  # r3 x r1^2
    return F3.reshape(W.shape[1], r1, r1).transpose(1, 2, 0)


def _residuals(U, W, M1, M3, F):
    r1 = U.shape[1]
    f2 = float(np.sum(F * F))
    if f2 == 0.0:
        return StationarityReport(float("inf"), float("inf"))
    F1 = F.reshape(r1, -1)
    G1 = M1 @ F1.T
    R1 = G1 - U @ (U.T @ G1)
    F3 = F.transpose(2, 0, 1).reshape(W.shape[1], -1)
    G3 = M3 @ F3.T
    R3 = G3 - W @ (W.T @ G3)
    return StationarityReport(float(np.linalg.norm(R1)) / f2, float(np.linalg.norm(R3)) / f2)


def row_sum_vector(A):
    """Sum of all slice row sums, normalized (all ones if that sum vanishes)."""
    v = np.bincount(A.subs[:, 0], weights=A.vals, minlength=A.dims[0])
    nv = np.linalg.norm(v)
    if nv == 0:
        v = np.ones(A.dims[0])
        nv = np.linalg.norm(v)
    return v / nv


def initial_factors(A, r1, r3, init, rng):
    """Starting ``U`` per ``init``; ``W`` is returned when given, else None."""
    m = A.dims[0]
    if init.method == "rank111":
        u = row_sum_vector(A)[:, None]
        w = _m3(A, u)
        nw = np.linalg.norm(w)
        w = w / nw if nw > 0 else np.ones_like(w) / np.sqrt(w.size)
        u1 = _m1(A, u, w)
        nu = np.linalg.norm(u1)
        u = u1 / nu if nu > 0 else u
        return complete_basis(orthonormalize(u), r1, rng), None
    if init.method == "random":
        return complete_basis(np.zeros((m, 0)), r1, rng), None
    if init.method == "given":
        if init.U is None:
            raise ValueError("InitSpec(method='given') needs U")
        U = np.asarray(init.U, dtype=np.float64).reshape(m, -1)[:, :r1]
        U = complete_basis(orthonormalize(U), r1, rng)
        W = None
        if init.W is not None:
            W = np.asarray(init.W, dtype=np.float64).reshape(A.dims[2], -1)[:, :r3]
            W = complete_basis(orthonormalize(W), r3, rng)
        return U, W
    raise ValueError(f"unknown init method {init.method!r}")


# solver --------------------------------------------------------------


class _State:
    """Factors plus the matricized products they determine."""

    __slots__ = ("U", "W", "T", "M1", "M3", "F", "f", "svU", "svW", "rankU", "rankW")


def _finish_state(A, st, svU, rankU):
    st.M1 = _m1(A, st.U, st.W, st.T)
    st.F = _core_from_m3(st.M3, st.W, st.U.shape[1])
    st.f = float(np.linalg.norm(st.F))
    st.svU = svU if svU is not None else np.zeros(0)
    st.rankU = rankU if rankU is not None else st.U.shape[1]
    return st


def _state_from_uw(A, U, W):
    st = _State()
    st.U, st.W = U, W
    st.T = contract_mode2(A, U)
    st.M3 = _m3(A, U, st.T)
    st.svW, st.rankW = np.zeros(0), W.shape[1]
    return _finish_state(A, st, None, None)


def _w_step(A, U, T, r3, rng):
    M3 = _m3(A, U, T)
    W, svW, rankW = _leading_left(M3, r3, rng)
    return W, M3, svW, rankW


def _state_from_u(A, U, r3, rng, svU=None, rankU=None):
    st = _State()
    st.U = U
    st.T = contract_mode2(A, U)
    st.W, st.M3, st.svW, st.rankW = _w_step(A, U, st.T, r3, rng)
    return _finish_state(A, st, svU, rankU)


def _gradient_step(A, st, r3, rng, max_halvings=40, max_doublings=30):
    """Grassmann gradient ascent step on ``U`` with a two-sided line search.

    The step is halved until the objective increases, then doubled for as
    long as it keeps increasing. Returns None if no ascent is found.
    """
    r1 = st.U.shape[1]
    F1 = st.F.reshape(r1, -1)
    G = st.M1 @ F1.T
    D = G - st.U @ (st.U.T @ G)
    if not np.any(D):
        return None

    def trial(t):
        return _state_from_u(A, orthonormalize(st.U + t * D), r3, rng)

    t = 1.0 / max(st.f * st.f, np.finfo(float).tiny)
    best = None
    for _ in range(max_halvings):
        cand = trial(t)
        if cand.f > st.f:
            best = cand
            break
        t *= 0.5
    if best is None:
        return None
    for _ in range(max_doublings):
        t *= 2.0
        cand = trial(t)
        if cand.f <= best.f:
            break
        best = cand
    return best


def hooi_sym(
    A,
    r1,
    r3,
    tol=1e-12,
    max_iter=200,
    init=None,
    seed=0,
    stat_tol=1e-9,
):
    """Symmetric HOOI for the best rank-(r1, r1, r3) approximation.

    Parameters
    ----------
    A : SparseTensor3
        (1,2)-symmetric tensor of shape ``(m, m, n)``.
    r1, r3 : int
        Target ranks with ``1 <= r1 < m`` and ``1 <= r3 <= n``.
    tol : float
        Relative change of ``||core||`` between sweeps below which the run may
        stop.
    max_iter : int
        Maximum number of sweeps.
    init : InitSpec, optional
        Starting point; defaults to ``InitSpec()``.
    seed : int
        Seed for the random padding and basis completion.
    stat_tol : float
        The run also requires ``max(rho1, rho3) <= stat_tol`` before it
        reports convergence. A small objective change alone can leave the
        subspaces far less accurate than the objective.

    Returns
    -------
    ApproxResult
    """
    A = _as_sparse(A)
    m, m2, n = A.dims
    if not A.sym12 or m != m2:
        raise ValueError("hooi_sym needs a (1,2)-symmetric tensor")
    if not (1 <= r1 < m):
        raise ValueError(f"r1 must satisfy 1 <= r1 < {m}, got {r1}")
    if not (1 <= r3 <= n):
        raise ValueError(f"r3 must satisfy 1 <= r3 <= {n}, got {r3}")
    if max(r1 * r1, r1 * r3) > 64:
        raise ValueError("ranks too large for the small Gram eigensolver")
    if A.nnz == 0:
        raise ValueError("hooi_sym needs a nonzero tensor")
    init = init or InitSpec()
    rng = np.random.default_rng(seed)

    U0, W0 = initial_factors(A, r1, r3, init, rng)
    if W0 is None:
        st = _state_from_u(A, U0, r3, rng)
    else:
        st = _state_from_uw(A, U0, W0)
    history = [st.f]
    report = _residuals(st.U, st.W, st.M1, st.M3, st.F)
    converged = False
    safeguard = 0
    breakdown = st.rankW < r3
    it = 0
    for it in range(1, max_iter + 1):
        U, svU, rankU = _leading_left(st.M1, r1, rng)
        cand = _state_from_u(A, U, r3, rng, svU=svU, rankU=rankU)
        if cand.f < st.f * (1.0 - ROUNDOFF_RTOL):
            safeguard += 1
            cand = _gradient_step(A, st, r3, rng)
        stalled = cand is None
        if not stalled:
            prev = st.f
            st = cand
            breakdown = breakdown or st.rankU < r1 or st.rankW < r3
        else:
            prev = st.f
        history.append(st.f)
        report = _residuals(st.U, st.W, st.M1, st.M3, st.F)
        change = abs(st.f - prev) / st.f if st.f > 0 else 0.0
        if change < tol and report.max() <= stat_tol:
            converged = True
            break
        if stalled:
            break

    U = canonicalize_signs(st.U)
    W = canonicalize_signs(st.W)
    core = multi_multiply(A, U, U, W, transposed=True)
    degenerate = _gap_degenerate(st.svU, r1) or _gap_degenerate(st.svW, r3)
    return ApproxResult(
        U=U,
        W=W,
        core=core,
        objective_history=history,
        stationarity=report,
        iterations=it,
        converged=converged,
        breakdown=bool(breakdown),
        achieved_rank=(int(min(st.rankU, r1)), int(min(st.rankU, r1)), int(min(st.rankW, r3))),
        degenerate_gap=bool(degenerate),
        safeguard_steps=safeguard,
        seed=seed,
    )


def check_stationarity(A, result):
    """Recompute the projected stationarity residuals of ``result`` from scratch."""
    A = _as_sparse(A)
    U, W = result.U, result.W
    M1 = _m1(A, U, W)
    M3 = _m3(A, U)
    F = _core_from_m3(M3, W, U.shape[1])
    return _residuals(U, W, M1, M3, F)


def _thread_count():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def best_of_restarts(A, r1, r3, restarts=1, seed=0, **opts):
    """Run ``restarts`` solves (the first from the default start) and keep the best.

    Extra restarts use random orthonormal starts with seeds ``seed + i``. The
    number of worker threads comes from the ``TENSORPART_THREADS`` variable.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    A = _as_sparse(A)

    def run(i):
        init = opts.get("init") if i == 0 else InitSpec("random")
        kw = {k: v for k, v in opts.items() if k != "init"}
        return hooi_sym(A, r1, r3, init=init, seed=seed + i, **kw)

    if restarts == 1:
        return run(0)
    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        results = list(pool.map(run, range(restarts)))
    best = max(range(restarts), key=lambda i: (results[i].objective, -i))
    return results[best]


# rank-(1,1,1) -----------------------------------------------------------


def rank111_sym(A, tol=1e-14, max_iter=2000, seed=0, stat_tol=1e-11):
    """Stationary rank-(1,1,1) triple ``(u, w, tau)`` of a (1,2)-symmetric tensor.

    ``u`` and ``w`` are unit vectors with ``<A . (u, u)>_{1,2} = tau w`` and
    ``<A . (u, w)>_{1,3} = tau u`` up to the stationarity tolerance. Signs are
    canonicalized so the largest-magnitude entry of ``u`` (and ``w``) is
    positive. For nonnegative ``A`` the start is nonnegative and every
    iterate stays one-signed, so ``u`` and ``w`` come out nonnegative.
    """
    A = _as_sparse(A)
    if A.nnz == 0:
        raise ValueError("rank111_sym needs a nonzero tensor")
    res = hooi_sym(A, 1, 1, tol=tol, max_iter=max_iter, seed=seed, stat_tol=stat_tol)
    return res.U[:, 0], res.W[:, 0], float(res.core[0, 0, 0])


def rank111_residuals(A, u, w, tau):
    """Residual norms of the two rank-(1,1,1) stationarity equations."""
    A = _as_sparse(A)
    r3 = project_all_but(A, 3, u, u)[:, 0] - tau * w
    r1 = project_all_but(A, 1, u, w)[:, 0] - tau * u
    return float(np.linalg.norm(r3)), float(np.linalg.norm(r1))


@dataclass
class Rank111Result:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    tau: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def rank111(A, tol=1e-14, max_iter=5000, seed=0, stat_tol=1e-11):
    """Rank-(1,1,1) approximation of a general 3-tensor by alternating maximization.

    Each of ``u``, ``v``, ``w`` is updated in turn as the normalized
    contraction of ``A`` with the other two, which maximizes ``A(u, v, w)``
    over that vector exactly. Used for tensors without (1,2)-symmetry, such
    as the off-diagonal block of a bipartite tensor.
    """
    A = _as_sparse(A) if not isinstance(A, SparseTensor3) else A
    if A.nnz == 0:
        raise ValueError("rank111 needs a nonzero tensor")
    vecs = []
    for d in range(3):
        v = np.bincount(A.subs[:, d], weights=np.abs(A.vals), minlength=A.dims[d])
        vecs.append(v / np.linalg.norm(v))
    u, v, w = vecs
    tau = 0.0
    history = []
    converged = False
    it = 0

    def unit(x):
        nx = np.linalg.norm(x)
        return (x / nx, nx) if nx > 0 else (x, 0.0)

    for it in range(1, max_iter + 1):
        u, _ = unit(project_all_but(A, 1, v, w)[:, 0])
        v, _ = unit(project_all_but(A, 2, u, w)[:, 0])
        gw = project_all_but(A, 3, u, v)[:, 0]
        w, new = unit(gw)
        history.append(new)
        ru = project_all_but(A, 1, v, w)[:, 0]
        rv = project_all_but(A, 2, u, w)[:, 0]
        res = max(np.linalg.norm(ru - new * u), np.linalg.norm(rv - new * v)) / max(new, 1e-300)
        change = abs(new - tau) / max(new, 1e-300)
        tau = new
        if change < tol and res <= stat_tol:
            converged = True
            break
    # Put signs in canonical form; tau stays nonnegative since w absorbs the sign.
    su = 1.0 if u[np.argmax(np.abs(u))] >= 0 else -1.0
    sv = 1.0 if v[np.argmax(np.abs(v))] >= 0 else -1.0
    u, v, w = su * u, sv * v, su * sv * w
    return Rank111Result(u, v, w, float(tau), it, converged, history)
