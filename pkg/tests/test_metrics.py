import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import rankdata

from diffattn.metrics import (
    average_ranks,
    average_ranks_rows,
    dataset_accuracy,
    downscale_attention,
    normalize_answer,
    rank_correlation,
    rank_correlation_rows,
    vqa_accuracy,
)

seeds = st.integers(0, 2**31 - 1)


def spearman_first_principles(p, q):
    n = len(p)
    rp = {i: r + 1 for r, i in enumerate(sorted(range(n), key=lambda i: -p[i]))}
    rq = {i: r + 1 for r, i in enumerate(sorted(range(n), key=lambda i: -q[i]))}
    return 1.0 - 6.0 * sum((rp[i] - rq[i]) ** 2 for i in range(n)) / (n**3 - n)


@pytest.mark.parametrize("matches,expected", [(0, 0.0), (1, 1 / 3), (2, 2 / 3), (3, 1.0), (4, 1.0), (10, 1.0)])
def test_vqa_accuracy_counts(matches, expected):
    answers = [7] * matches + [1] * (10 - matches)
    assert vqa_accuracy(7, answers) == expected


def test_vqa_accuracy_strings():
    answers = ["Two", "2", "two.", "three"] + ["four"] * 6
    assert vqa_accuracy("2", answers) == 1.0
    assert vqa_accuracy("three", answers) == pytest.approx(1 / 3)
    assert vqa_accuracy("dog", answers) == 0.0


def test_normalize_answer():
    assert normalize_answer("The Dog") == "dog"
    assert normalize_answer("two") == "2"
    assert normalize_answer("brown and white.") == "brown and white"


def test_dataset_accuracy_constant_predictor(rng):
    ann = rng.integers(0, 4, size=(200, 10))
    per_item = [min(np.sum(a == 2) / 3, 1.0) for a in ann]
    assert dataset_accuracy(np.full(200, 2), ann) == pytest.approx(np.mean(per_item), abs=1e-15)


def test_downscale_cases():
    np.testing.assert_allclose(downscale_attention(np.ones((28, 28))), np.full(196, 1 / 196), rtol=0, atol=1e-15)
    m = np.zeros((28, 28))
    m[4:6, 10:12] = 1.0
    out = downscale_attention(m)
    assert np.count_nonzero(out) == 1 and out[2 * 14 + 5] == 1.0


@given(seeds, st.integers(14, 40), st.integers(14, 40))
def test_downscale_sums_to_one(seed, h, w):
    out = downscale_attention(np.random.default_rng(seed).random((h, w)) + 1e-3)
    assert out.shape == (196,) and abs(out.sum() - 1.0) < 1e-9


def test_downscale_rejects_bad_input():
    with pytest.raises(ValueError):
        downscale_attention(np.zeros((28, 28)))
    with pytest.raises(ValueError):
        downscale_attention(np.ones((10, 28)))


def test_rank_correlation_extremes(rng):
    p = rng.random(50)
    assert rank_correlation(p, p) == 1.0
    assert rank_correlation(p, -p) == -1.0


@given(seeds, st.integers(2, 60))
def test_rank_correlation_first_principles(seed, n):
    r = np.random.default_rng(seed)
    p, q = r.permutation(n) + r.random(n) * 0.1, r.random(n)
    assert rank_correlation(p, q) == pytest.approx(spearman_first_principles(p, q), abs=1e-12)


@given(seeds, st.integers(2, 40))
def test_average_ranks_against_scipy(seed, n):
    x = np.random.default_rng(seed).integers(0, 5, size=n).astype(float)
    np.testing.assert_array_equal(average_ranks(x), rankdata(-x, method="average"))


@given(seeds)
def test_rank_correlation_invariances(seed):
    r = np.random.default_rng(seed)
    p, q = r.random(20), r.random(20)
    v = rank_correlation(p, q)
    assert rank_correlation(q, p) == pytest.approx(v, abs=1e-12)
    assert rank_correlation(np.exp(3 * p), q**3) == pytest.approx(v, abs=1e-12)
    assert -1.0 <= v <= 1.0


@given(seeds, st.integers(2, 30))
def test_rows_version_matches(seed, n):
    r = np.random.default_rng(seed)
    P = r.integers(0, 4, size=(6, n)).astype(float)
    Q = r.random((6, n))
    for i in range(6):
        np.testing.assert_array_equal(average_ranks_rows(P)[i], average_ranks(P[i]))
    np.testing.assert_allclose(rank_correlation_rows(P, Q), [rank_correlation(a, b) for a, b in zip(P, Q)], rtol=0, atol=1e-15)


def test_rank_correlation_errors():
    with pytest.raises(ValueError):
        rank_correlation([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        rank_correlation([1.0], [1.0])
