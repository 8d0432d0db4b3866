import itertools

import numpy as np
import pytest

from physichm import metrics


def auroc_pairs(s, y):
    pos, neg = s[y], s[~y]
    return sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg)) / (len(pos) * len(neg))


def ap_ranks(s, y):
    order = sorted(range(len(s)), key=lambda i: -s[i])  # sorted() is stable
    hits, total = 0, 0.0
    for rank, i in enumerate(order, 1):
        if y[i]:
            hits += 1
            total += hits / rank
    return total / hits


def f1_scan(s, y):
    best = 0.0
    for t in list(np.unique(s)) + [np.inf]:
        pred = s >= t
        tp = np.sum(pred & y)
        fp = np.sum(pred & ~y)
        fn = np.sum(~pred & y)
        best = max(best, 2 * tp / (2 * tp + fp + fn))
    return best


def test_examples():
    assert metrics.auroc([0.8, 0.3, 0.2, 0.4], [1, 1, 0, 0]) == 0.75
    assert metrics.auroc([0.5, 0.5], [1, 0]) == 0.5
    assert metrics.auroc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert metrics.average_precision([3, 2, 1], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    assert metrics.average_precision([3, 2, 1], [1, 1, 0]) == 1.0
    assert metrics.average_precision([5, 4, 3, 2, 1], [0, 0, 0, 0, 1]) == pytest.approx(1 / 5)
    assert metrics.f1_max([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0


def test_errors():
    with pytest.raises(ValueError):
        metrics.auroc([1, 2], [1, 1])
    with pytest.raises(ValueError):
        metrics.auroc([1, 2], [0, 0])
    with pytest.raises(ValueError):
        metrics.average_precision([1, 2], [0, 0])
    with pytest.raises(ValueError):
        metrics.f1_max([1, 2], [0, 0])
    with pytest.raises(ValueError):
        metrics.auroc([1, np.nan], [0, 1])
    assert metrics.average_precision([1, 2], [1, 1]) == 1.0


def test_random_scores_near_half():
    r = np.random.default_rng(5)
    assert abs(metrics.auroc(r.random(1000), r.random(1000) < 0.5) - 0.5) < 0.05


def random_instance(r):
    n = int(r.integers(2, 51))
    y = r.random(n) < r.uniform(0.1, 0.9)
    y[0], y[1] = True, False
    r.shuffle(y)
    # coarse grid so ties are common
    s = r.integers(0, int(r.integers(2, 12)), n) / 4.0
    return s, y


def test_against_brute_force_oracles():
    r = np.random.default_rng(2024)
    for _ in range(1000):
        s, y = random_instance(r)
        assert abs(metrics.auroc(s, y) - auroc_pairs(s, y)) <= 1e-12
        assert abs(metrics.average_precision(s, y) - ap_ranks(s, y)) <= 1e-12
        assert abs(metrics.f1_max(s, y) - f1_scan(s, y)) <= 1e-12
