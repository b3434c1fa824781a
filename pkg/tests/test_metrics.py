import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from censalign.metrics import (adjusted_rand_index, benjamini_hochberg, betainc_regularized, match_permutation,
                               paired_ttest, pearson, score_fit, student_t_sf2, swaps_bruteforce, swaps_mergesort,
                               swaps_metric)


def ari_by_pairs(a, b):
    """Pair-counting ARI straight from the definition (no contingency table)."""
    n = len(a)
    pairs = list(itertools.combinations(range(n), 2))
    same_a = [a[i] == a[j] for i, j in pairs]
    same_b = [b[i] == b[j] for i, j in pairs]
    index = sum(x and y for x, y in zip(same_a, same_b))
    sa, sb = sum(same_a), sum(same_b)
    expected = sa * sb / len(pairs)
    maximum = (sa + sb) / 2
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


def test_ari_examples():
    assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert adjusted_rand_index([0, 0, 1, 1], [0, 0, 0, 0]) == 0.0
    assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 1, 1]) == 0.0
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0])


def test_ari_matches_pair_counting_on_all_small_labelings():
    for n in range(2, 7):
        labelings = list(itertools.product(range(3), repeat=n))
        truths = labelings[:: max(1, len(labelings) // 40)]
        for a in truths:
            for b in labelings:
                assert adjusted_rand_index(a, b) == pytest.approx(ari_by_pairs(a, b), abs=1e-12)


@given(st.lists(st.integers(0, 3), min_size=2, max_size=30), st.permutations(range(4)))
def test_ari_relabel_invariant(labels, perm):
    rng = np.random.default_rng(len(labels))
    truth = rng.integers(0, 3, len(labels))
    relabeled = [perm[x] for x in labels]
    assert adjusted_rand_index(truth, labels) == pytest.approx(adjusted_rand_index(truth, relabeled))


def test_ari_range():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = adjusted_rand_index(rng.integers(0, 3, 10), rng.integers(0, 3, 10))
        assert -1 <= v <= 1


def test_swaps_examples():
    assert swaps_metric([1, 2, 3, 4], [10, 20, 30, 40]) == 0.0
    assert swaps_metric([1, 2, 3, 4], [4, 3, 2, 1]) == 1.0
    assert swaps_metric([1, 2, 3], [2, 1, 3]) == pytest.approx(1 / 3)
    assert swaps_metric([1, 1, 2], [3, 2, 1]) == pytest.approx(2 / 3)  # the tied pair never counts
    with pytest.raises(ValueError):
        swaps_metric([1, 2], [1])


def test_swaps_paths_agree():
    rng = np.random.default_rng(0)
    for i in range(1000):
        n = int(rng.integers(2, 60))
        # coarse values force plenty of ties
        a = rng.integers(0, 8, n).astype(float) if i % 2 else rng.normal(size=n)
        b = rng.integers(0, 8, n).astype(float) if i % 3 else rng.normal(size=n)
        assert swaps_bruteforce(a, b) == swaps_mergesort(a, b)


@given(st.integers(0, 10_000))
def test_swaps_complement_without_ties(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=15), rng.normal(size=15)
    assert swaps_metric(a, b) + swaps_metric(a, -b) == pytest.approx(1.0)


def test_pearson_examples():
    a = np.array([0.0, 1.0, 2.0, 5.0])
    assert pearson(a, 2 * a + 1) == pytest.approx(1.0)
    assert pearson(a, -a) == pytest.approx(-1.0)
    assert pearson([0, 1, 2], [0, 2, 1]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])


@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariant(seed, scale, shift):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=12), rng.normal(size=12)
    assert pearson(a, b) == pytest.approx(pearson(scale * a + shift, b), abs=1e-9)


def test_match_permutation():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(3, 2, 3))
    perm, err = match_permutation(t, t[[2, 0, 1]])
    assert err == 0.0 and [t[[2, 0, 1]][p].tolist() for p in perm] == t.tolist()
    assert match_permutation(t, t) == ((0, 1, 2), 0.0)
    with pytest.raises(ValueError):
        match_permutation(np.zeros((7, 1, 1)), np.zeros((7, 1, 1)))


def test_match_permutation_error_scale():
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = rng.normal(size=(3, 2, 3)) * 10
        eps = 1e-3
        noise = rng.normal(size=t.shape)
        noise *= eps / np.sqrt((noise**2).reshape(3, -1).sum(axis=1)).max()
        _, err = match_permutation(t, t + noise)
        assert eps / 2 <= err <= 2 * eps * math.sqrt(2 * 3)


def test_incomplete_beta_against_scipy():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a, b, x = rng.uniform(0.2, 30), rng.uniform(0.2, 30), rng.uniform()
        assert betainc_regularized(a, b, x) == pytest.approx(stats.beta.cdf(x, a, b), abs=1e-12)
    for t, df in [(0.5, 4), (2.776, 4), (10.0, 2), (-1.3, 9)]:
        assert student_t_sf2(t, df) == pytest.approx(2 * stats.t.sf(abs(t), df), abs=1e-12)


def test_ttest_identical():
    r = paired_ttest([0.5, 0.6, 0.7], [0.5, 0.6, 0.7])
    assert (r.t, r.p, r.degenerate) == (0.0, 1.0, True)


def test_ttest_constant_difference_is_degenerate():
    r = paired_ttest([1, 2, 3, 4, 5], [0, 1, 2, 3, 4])
    assert r.degenerate and r.p == 0.0 and r.t > 0


def test_ttest_matches_scipy():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=5), rng.normal(size=5)
    ours = paired_ttest(a, b)
    ref = stats.ttest_rel(a, b)
    assert ours.t == pytest.approx(ref.statistic) and ours.p == pytest.approx(ref.pvalue)


def test_ttest_calibration():
    rng = np.random.default_rng(12345)
    hits = 0
    n_sim = 10_000
    for _ in range(n_sim):
        a, b = rng.normal(size=5), rng.normal(size=5)
        hits += paired_ttest(a, b).p < 0.05
    assert 0.04 <= hits / n_sim <= 0.06


def test_ttest_needs_two_trials():
    with pytest.raises(ValueError):
        paired_ttest([1.0], [2.0])


def test_benjamini_hochberg():
    p = [0.01, 0.04, 0.03, 0.2]
    adj, rej = benjamini_hochberg(p, 0.05)
    # sorted p = .01 .03 .04 .2 -> p*m/rank = .04 .06 .0533 .2, then running minimum from the top
    assert np.allclose(adj, [0.04, 0.16 / 3, 0.16 / 3, 0.2])
    assert rej.tolist() == [True, False, False, False]
    assert benjamini_hochberg([])[0].size == 0


def test_score_fit_without_delays():
    s = score_fit([0, 0, 1, 1], [1, 1, 0, 0])
    assert s == {"ari": 1.0, "swaps": None, "pearson": None}
    s = score_fit([0, 0, 1, 1], [1, 1, 0, 0], [1, 2, 3, 4], [0, 0, 0, 0])
    assert s["swaps"] == 0.0 and s["pearson"] is None
