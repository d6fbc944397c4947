import numpy as np
import pytest

from tensorpart.normalize import verify_normalization
from tensorpart.synth import (
    EXPECTED_PATTERN,
    PATTERNS,
    SynthSpec,
    cooccurrence_tensor,
    generate,
    planted_tensor,
    synthetic_corpus,
)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_generated_tensor_properties(pattern):
    A, truth = generate(SynthSpec(pattern, m=40, n=10, seed=3))
    assert A.sym12 and A.is_symmetric() and A.is_nonnegative()
    assert not np.any(A.subs[:, 0] == A.subs[:, 1])
    lam = verify_normalization(A)
    np.testing.assert_allclose(lam[lam != 0], 1.0, atol=1e-8)
    assert np.bincount(truth.labels12).tolist() == [20, 20]
    assert np.bincount(truth.labels3).tolist() == [5, 5]
    assert pattern in EXPECTED_PATTERN


def test_planted_zero_regions_hold_without_perturbation():
    spec = SynthSpec("prop53", m=30, n=6, perturb=0.0, seed=1).resolved()
    raw, _ = planted_tensor(spec)
    D = raw.to_dense()
    assert not D[:15, 15:].any()
    assert not D[15:, 15:, :3].any()
    assert not D[:15, :15, 3:].any()


def test_labels_follow_relabeling():
    A, truth = generate(SynthSpec("prop54", m=30, n=6, seed=2))
    D = A.to_dense()
    I, J = truth.block(0), truth.block(1)
    assert not D[np.ix_(I, I, range(6))].any()
    assert not D[np.ix_(J, J, range(6))].any()


def test_same_seed_same_tensor():
    a, _ = generate(SynthSpec("ex3", m=30, n=6, seed=5))
    b, _ = generate(SynthSpec("ex3", m=30, n=6, seed=5))
    np.testing.assert_array_equal(a.subs, b.subs)
    np.testing.assert_array_equal(a.vals, b.vals)


def test_defaults_resolve():
    s = SynthSpec("ex1", m=100, n=10).resolved()
    assert s.blocks == (50, 50) and s.slice_blocks == (5, 5)
    assert s.density == pytest.approx(3 * np.log(50) / 50)
    assert s.perturb > 0
    assert SynthSpec("prop52").resolved().perturb == 0.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"pattern": "ex9"},
        {"m": 10, "blocks": (3, 3)},
        {"m": 10, "blocks": (1, 9)},
        {"n": 4, "slice_blocks": (0, 4)},
        {"density": 1.5},
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs).resolved()


def test_cooccurrence_counts():
    docs = [(0, [1, 2, 3]), (0, [1, 2]), (1, [3, 3, 0]), (1, [4])]
    A = cooccurrence_tensor(docs, 5, 2)
    D = A.to_dense()
    assert D[1, 2, 0] == 2 and D[2, 1, 0] == 2
    assert D[1, 3, 0] == 1 and D[0, 3, 1] == 1
    assert np.trace(D[:, :, 1]) == 0
    assert A.nnz == 8


def test_synthetic_corpus_shape():
    docs, labels = synthetic_corpus(vocab_size=400, n_days=6, docs_per_day=5, topic_size=40, seed=1)
    assert len(docs) == 30
    assert set(labels.tolist()) == {-1, 0, 1}
    assert all(0 <= day < 6 for day, _ in docs)


def test_block_layout_is_exactly_reducible():
    A, truth = generate(SynthSpec("prop52", m=40, n=8, seed=8))
    D = A.to_dense()
    I, J = truth.block(0), truth.block(1)
    assert not D[np.ix_(I, J, range(8))].any()
    assert not D[np.ix_(J, I, range(8))].any()
