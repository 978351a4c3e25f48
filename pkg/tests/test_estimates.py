import numpy as np
import pytest

from treelab.estimates import (batch_means_estimate, exact_value,
                               normal_estimate, wilson_estimate)


def test_wilson_basic():
    est = wilson_estimate(50, 100)
    assert est.mean == 0.5
    assert 0.04 < est.stderr < 0.06
    assert est.method == "wilson"


def test_wilson_keeps_slack_at_corners():
    est = wilson_estimate(0, 1000)
    assert est.mean == 0.0
    assert est.stderr > 0.0
    est = wilson_estimate(1000, 1000)
    assert est.stderr > 0.0


def test_wilson_covers_truth():
    rng = np.random.default_rng(0)
    p = 0.37
    misses_3s = 0
    misses_1s = 0
    for _ in range(200):
        hits = int(rng.binomial(400, p))
        est = wilson_estimate(hits, 400)
        if abs(est.mean - p) > 3 * est.stderr:
            misses_3s += 1
        if abs(est.mean - p) > est.stderr:
            misses_1s += 1
    assert misses_3s <= 6
    # one-sigma misses should sit near the normal 32%, so the interval is
    # neither too wide nor too narrow
    assert 35 <= misses_1s <= 95


def test_normal_estimate():
    rng = np.random.default_rng(1)
    values = rng.normal(5.0, 2.0, size=4000)
    est = normal_estimate(values)
    assert abs(est.mean - 5.0) < 3 * est.stderr
    assert est.method == "normal"
    with pytest.raises(ValueError):
        normal_estimate([1.0])


def test_batch_means_widen_for_correlated_series():
    # AR(1) series: naive iid stderr underestimates, batch means should not
    rng = np.random.default_rng(2)
    n, rho = 30000, 0.9
    x = np.empty(n)
    x[0] = 0.0
    noise = rng.normal(size=n)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + noise[i]
    est = batch_means_estimate(x, n_batches=30)
    naive = x.std(ddof=1) / np.sqrt(n)
    assert est.stderr > 2 * naive
    assert abs(est.mean - 0.0) < 4 * est.stderr
    with pytest.raises(ValueError):
        batch_means_estimate(np.arange(10), n_batches=30)


def test_exact_value():
    est = exact_value(3.5)
    assert est.stderr == 0.0 and est.method == "exact"
