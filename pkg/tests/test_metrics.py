import itertools
import math

import numpy as np
import pytest
from scipy.stats import rankdata

from histdp.metrics import (
    AttackRates,
    class_precision,
    class_recall,
    graded_metrics,
    macro_f1,
    privacy_leakage,
    wilcoxon_signed_rank,
)


def test_class_recall_precision_hand_counts():
    true = [0, 0, 1, 1, 2]
    pred = [0, 1, 1, 1, 2]
    assert class_recall(true, pred, 0) == pytest.approx(0.5, abs=1e-10)
    assert class_precision(true, pred, 0) == pytest.approx(1.0, abs=1e-10)
    assert class_recall(true, pred, 1) == pytest.approx(1.0, abs=1e-10)
    assert class_precision(true, pred, 1) == pytest.approx(2 / 3, abs=1e-10)


def test_macro_f1_hand_counted():
    true = [0, 0, 1, 1, 2]
    pred = [0, 1, 1, 1, 2]
    # per-class F1: 2/3, 0.8, 1.0
    assert macro_f1(true, pred) == pytest.approx((2 / 3 + 0.8 + 1.0) / 3, abs=1e-10)


def test_macro_f1_zero_denominator_class():
    # class 1 never predicted and never true-positive: F1 contribution 0
    assert macro_f1([1, 1], [0, 0], classes=[0, 1]) == pytest.approx(0.0, abs=1e-10)


def test_macro_f1_perfect():
    assert macro_f1([0, 1, 2], [0, 1, 2]) == pytest.approx(1.0, abs=1e-12)


def test_graded_fixture():
    gp, gr, gf = graded_metrics([2, 2, 1, 0, 3], [2, 1, 1, 1, 3])
    assert gp == pytest.approx(0.75, abs=1e-10)
    assert gr == pytest.approx(0.75, abs=1e-10)
    assert gf == pytest.approx(0.75, abs=1e-10)


def test_graded_partition_identity():
    gen = np.random.default_rng(11)
    for _ in range(20):
        a = gen.integers(0, 4, size=37)
        p = gen.integers(0, 4, size=37)
        n = a.size
        t = np.sum(p == a) / n
        fn = np.sum(a > p) / n
        fp = np.sum(p > a) / n
        assert t + fn + fp == pytest.approx(1.0, abs=1e-12)
        gp, gr, gf = graded_metrics(a, p)
        assert gp == pytest.approx(t / (t + fp) if t + fp else 0.0, abs=1e-10)
        assert gr == pytest.approx(t / (t + fn) if t + fn else 0.0, abs=1e-10)


def test_privacy_leakage_arithmetic():
    assert privacy_leakage(AttackRates(0.9, 0.2)) == pytest.approx(0.7, abs=1e-12)
    assert privacy_leakage(AttackRates(0.5, 0.5)) == 0.0
    with pytest.raises(ValueError):
        AttackRates(1.2, 0.0)


def brute_force_wilcoxon(a, b):
    """Oracle: enumerate all 2^n sign assignments of the tied ranks."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    ranks = rankdata(np.abs(d))
    w_obs = ranks[d > 0].sum()
    n = d.size
    stats = []
    for signs in itertools.product((0, 1), repeat=n):
        stats.append(sum(r for r, s in zip(ranks, signs) if s))
    stats = np.asarray(stats)
    p_le = np.mean(stats <= w_obs + 1e-9)
    p_ge = np.mean(stats >= w_obs - 1e-9)
    return min(1.0, 2 * min(p_le, p_ge))


def test_wilcoxon_matches_enumeration_oracle():
    gen = np.random.default_rng(5)
    for trial in range(6):
        a = gen.integers(0, 5, size=8).astype(float)  # integer grid forces ties
        b = gen.integers(0, 5, size=8).astype(float)
        if np.count_nonzero(a - b) < 5:
            continue
        got = wilcoxon_signed_rank(a, b)
        want = brute_force_wilcoxon(a, b)
        assert got == pytest.approx(want, abs=1e-10), f"trial={trial}"


def test_wilcoxon_extreme_one_sided():
    # 10 positive distinct differences: two-sided p = 2 / 2^10
    a = np.arange(1.0, 11.0) * 10
    b = np.arange(1.0, 11.0) * 10 - np.arange(1.0, 11.0)
    assert wilcoxon_signed_rank(a, b) == pytest.approx(2 / 2**10, abs=1e-12)


def test_wilcoxon_symmetric_is_insignificant():
    a = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    b = np.array([2.0, 1.0, 4.0, 3.0, 6.0, 5.0])
    assert wilcoxon_signed_rank(a, b) == pytest.approx(1.0, abs=1e-10)


def test_wilcoxon_matches_scipy_exact_no_ties():
    from scipy.stats import wilcoxon as scipy_wilcoxon

    gen = np.random.default_rng(9)
    a = gen.standard_normal(15)
    b = a + gen.standard_normal(15) * 0.5
    got = wilcoxon_signed_rank(a, b)
    want = scipy_wilcoxon(a, b, mode="exact").pvalue
    assert got == pytest.approx(want, abs=1e-10)


def test_wilcoxon_large_n_normal_approximation():
    gen = np.random.default_rng(13)
    a = gen.standard_normal(50)
    b = a + 0.8 + gen.standard_normal(50) * 0.3
    from scipy.stats import wilcoxon as scipy_wilcoxon

    got = wilcoxon_signed_rank(a, b)
    want = scipy_wilcoxon(a, b, mode="approx", correction=False).pvalue
    assert got == pytest.approx(want, rel=1e-6)
    assert got < 1e-6


def test_wilcoxon_rejects_degenerate_input():
    with pytest.raises(ValueError, match="degenerate"):
        wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="at least 5"):
        wilcoxon_signed_rank([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
