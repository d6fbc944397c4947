"""Planted-structure generators for (1,2)-symmetric adjacency tensors.

Every generator returns a nonnegative, hollow, (1,2)-symmetric tensor whose
slices have been degree-normalized, together with the ground-truth block
labels after a random symmetric relabeling of rows/columns and an independent
relabeling of slices.

Layouts (rows split into blocks I, J; slices into K1, K2):

``prop52`` / ``ex1``
    Every slice holds separate graphs on I and on J.
``prop53``
    Slices in K1 hold a graph on I only, slices in K2 a graph on J only.
``prop54`` / ``ex2``
    Every slice is bipartite between I and J.
``ex3``
    K1 slices as in ``prop52``; K2 slices hold a graph on all nodes.
``ex4``
    K1 slices hold edges inside I and between I and J, none inside J;
    K2 slices hold a graph on all nodes.

The ``prop*`` layouts default to no perturbation; the ``ex*`` layouts add
random edges in the planted-empty region at ``perturb`` times the block edge
probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .normalize import normalize_slices
from .tensor import Permutation, SparseTensor3, permute

RNG_ALGORITHM = "numpy.random.PCG64"
DEFAULT_PERTURB = 0.15

# For each layout: planted block pairs (II, IJ, JJ) in slice groups K1 and K2.
_LAYOUTS = {
    "prop52": ((1, 0, 1), (1, 0, 1)),
    "prop53": ((1, 0, 0), (0, 0, 1)),
    "prop54": ((0, 1, 0), (0, 1, 0)),
    "ex3": ((1, 0, 1), (1, 1, 1)),
    "ex4": ((1, 1, 0), (1, 1, 1)),
}
_ALIASES = {"ex1": "prop52", "ex2": "prop54"}
PATTERNS = ("ex1", "ex2", "ex3", "ex4", "prop52", "prop53", "prop54")

# Expected classification of each layout.
EXPECTED_PATTERN = {
    "prop52": "DiagSlices_12Reducible",
    "ex1": "DiagSlices_12Reducible",
    "prop53": "BlockDiag3_FullySeparable",
    "prop54": "AntiDiag_Bipartite",
    "ex2": "AntiDiag_Bipartite",
    "ex3": "Mixed_12Reducible",
    "ex4": "ThreeReducible",
}


@dataclass
class SynthSpec:
    """Parameters of a planted instance.

    Attributes
    ----------
    pattern : str
        One of ``PATTERNS``.
    m, n : int
        Tensor shape is ``(m, m, n)``.
    blocks : (int, int), optional
        Row block sizes ``(m1, m2)``; defaults to an even split.
    slice_blocks : (int, int), optional
        Slice group sizes ``(n1, n2)``; defaults to an even split.
    density : float, optional
        Edge probability inside planted blocks; defaults to
        ``3 ln(m1) / m1``.
    perturb : float, optional
        Edge probability in the planted-empty region relative to
        ``density``. Defaults to 0 for ``prop*`` layouts and
        ``DEFAULT_PERTURB`` for ``ex*`` layouts.
    seed : int
    """

    pattern: str = "ex1"
    m: int = 200
    n: int = 200
    blocks: Optional[tuple] = None
    slice_blocks: Optional[tuple] = None
    density: Optional[float] = None
    perturb: Optional[float] = None
    seed: int = 0

    def resolved(self):
        """Copy with every default filled in and validated."""
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; choose from {PATTERNS}")
        m1, m2 = self.blocks if self.blocks is not None else (self.m // 2, self.m - self.m // 2)
        n1, n2 = (
            self.slice_blocks
            if self.slice_blocks is not None
            else (self.n // 2, self.n - self.n // 2)
        )
        if m1 + m2 != self.m or n1 + n2 != self.n:
            raise ValueError("block sizes must add up to the tensor dimensions")
        if min(m1, m2) < 2:
            raise ValueError("each row block needs at least 2 indices")
        if min(n1, n2) < 1:
            raise ValueError("each slice group needs at least 1 slice")
        density = self.density if self.density is not None else min(1.0, 3 * np.log(m1) / m1)
        if self.perturb is None:
            perturb = 0.0 if self.pattern.startswith("prop") else DEFAULT_PERTURB
        else:
            perturb = self.perturb
        if not (0 <= density <= 1) or not (0 <= perturb * density <= 1):
            raise ValueError("densities must lie in [0, 1]")
        return SynthSpec(self.pattern, self.m, self.n, (m1, m2), (n1, n2), density, perturb, self.seed)

    def to_dict(self):
        s = self.resolved()
        return {
            "pattern": s.pattern,
            "m": s.m,
            "n": s.n,
            "blocks": list(s.blocks),
            "slice_blocks": list(s.slice_blocks),
            "density": s.density,
            "perturb": s.perturb,
            "seed": s.seed,
        }


@dataclass
class GroundTruth:
    """Planted labels after the random relabeling.

    ``labels12[i]`` is the block (0 for I, 1 for J) of row index ``i`` of the
    returned tensor; ``labels3[k]`` the group (0 for K1, 1 for K2) of slice
    ``k``. ``perm12``/``perm3`` map planted positions to returned positions.
    """

    labels12: np.ndarray
    labels3: np.ndarray
    perm12: Permutation
    perm3: Permutation
    spec: dict = field(default_factory=dict)
    rng: str = RNG_ALGORITHM

    def block(self, label=0):
        return np.flatnonzero(self.labels12 == label)

    def to_dict(self):
        return {
            "labels12": self.labels12.tolist(),
            "labels3": self.labels3.tolist(),
            "perm12": (self.perm12.map + 1).tolist(),
            "perm3": (self.perm3.map + 1).tolist(),
            "spec": self.spec,
            "rng": self.rng,
        }


def _sample_pairs(rng, rows, cols, p, n_slices, same):
    """Random symmetric edge set between index ranges, for ``n_slices`` slices.

    Returns ``(i, j, s)`` arrays of one orientation per edge; ``s`` is the slice
    offset within the group.
    """
    if p <= 0 or n_slices == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    if same:
        a, b = np.triu_indices(rows.size, k=1)
        pi, pj = rows[a], rows[b]
    else:
        a, b = np.meshgrid(np.arange(rows.size), np.arange(cols.size), indexing="ij")
        pi, pj = rows[a.ravel()], cols[b.ravel()]
    npairs = pi.size
    counts = rng.binomial(npairs, p, size=n_slices)
    s = np.repeat(np.arange(n_slices), counts)
    picks = np.concatenate([rng.choice(npairs, size=c, replace=False) for c in counts])
    picks = picks.astype(np.int64)
    return pi[picks], pj[picks], s


def planted_tensor(spec):
    """Unnormalized, unpermuted 0/1 tensor of a resolved spec."""
    layout = _LAYOUTS[_ALIASES.get(spec.pattern, spec.pattern)]
    m1, _ = spec.blocks
    n1, n2 = spec.slice_blocks
    rng = np.random.default_rng(spec.seed)
    I = np.arange(m1)
    J = np.arange(m1, spec.m)
    parts = []
    for group, (offset, count) in enumerate(((0, n1), (n1, n2))):
        for planted, (rows, cols, same) in zip(layout[group], ((I, I, True), (I, J, False), (J, J, True))):
            p = spec.density if planted else spec.density * spec.perturb
            i, j, s = _sample_pairs(rng, rows, cols, p, count, same)
            parts.append(np.column_stack([i, j, s + offset]))
    subs = np.vstack(parts)
    subs = np.vstack([subs, subs[:, [1, 0, 2]]])
    return SparseTensor3((spec.m, spec.m, spec.n), subs, np.ones(subs.shape[0]), sym12=True), rng


def generate(spec):
    """Build a normalized, randomly relabeled planted instance.

    Parameters
    ----------
    spec : SynthSpec

    Returns
    -------
    A : SparseTensor3
    truth : GroundTruth
    """
    spec = spec.resolved()
    raw, rng = planted_tensor(spec)
    normalized, _ = normalize_slices(raw)
    p12 = Permutation(rng.permutation(spec.m))
    p3 = Permutation(rng.permutation(spec.n))
    A = permute(normalized, p12, p3)
    labels12 = np.empty(spec.m, dtype=np.int64)
    labels12[p12.map] = (np.arange(spec.m) >= spec.blocks[0]).astype(np.int64)
    labels3 = np.empty(spec.n, dtype=np.int64)
    labels3[p3.map] = (np.arange(spec.n) >= spec.slice_blocks[0]).astype(np.int64)
    return A, GroundTruth(labels12, labels3, p12, p3, spec.to_dict())


def cooccurrence_tensor(documents, vocab_size, n_days):
    """Term co-occurrence tensor from tokenized documents.

    Parameters
    ----------
    documents : iterable of (day, term_ids)
        ``day`` in ``0..n_days-1``; ``term_ids`` the distinct terms of one
        document.
    vocab_size, n_days : int

    Returns
    -------
    SparseTensor3
        ``a(i, j, k)`` counts documents of day ``k`` containing both terms
        ``i != j``.
    """
    rows = []
    for day, terms in documents:
        t = np.unique(np.asarray(terms, dtype=np.int64))
        if t.size < 2:
            continue
        a, b = np.meshgrid(t, t, indexing="ij")
        off = a != b
        rows.append(np.column_stack([a[off], b[off], np.full(int(off.sum()), day)]))
    if not rows:
        return SparseTensor3((vocab_size, vocab_size, n_days), sym12=True)
    subs = np.vstack(rows)
    return SparseTensor3((vocab_size, vocab_size, n_days), subs, np.ones(subs.shape[0]), sym12=True)


def synthetic_corpus(vocab_size=2000, n_days=66, docs_per_day=60, topic_size=150,
                     doc_terms=12, topic_share=0.7, seed=0):
    """Synthetic news-like corpus with two topics and a Zipf background vocabulary.

    Each document picks one of two topics; a ``topic_share`` fraction of its
    terms come from that topic's vocabulary, the rest from a Zipf-weighted
    background. The two topics are active on overlapping but different day
    ranges. Returns ``(documents, topic_of_term)`` where ``topic_of_term`` is
    0 or 1 for topic terms and -1 for background terms.
    """
    rng = np.random.default_rng(seed)
    if 2 * topic_size >= vocab_size:
        raise ValueError("vocabulary too small for two topics")
    topic_terms = [np.arange(topic_size), np.arange(topic_size, 2 * topic_size)]
    background = np.arange(2 * topic_size, vocab_size)
    zipf = 1.0 / np.arange(1, background.size + 1)
    zipf /= zipf.sum()
    active = [np.arange(n_days) < (2 * n_days) // 3, np.arange(n_days) >= n_days // 3]
    docs = []
    for day in range(n_days):
        topics = [t for t in (0, 1) if active[t][day]]
        for _ in range(docs_per_day):
            t = topics[rng.integers(len(topics))]
            k_topic = rng.binomial(doc_terms, topic_share)
            terms = np.concatenate([
                rng.choice(topic_terms[t], size=k_topic, replace=False),
                rng.choice(background, size=doc_terms - k_topic, replace=False, p=zipf),
            ])
            docs.append((day, terms))
    labels = np.full(vocab_size, -1)
    labels[topic_terms[0]] = 0
    labels[topic_terms[1]] = 1
    return docs, labels
