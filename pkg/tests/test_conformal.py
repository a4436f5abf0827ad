import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatcast import synthgen
from heatcast.conformal import (
    ConformalPredictor, calibrate, conformal_threshold, empirical_coverage, predict_set,
    predict_sets, split_train_calibrate, threshold_rank,
)
from heatcast.errors import FingerprintMismatchError, SplitDegenerateError
from heatcast.forest import CLASSIFICATION, ForestParams

from helpers import coverage_replication, hand_forest, hand_tree, leaf, stack_from_config
from oracles import order_statistic_threshold

ALPHAS = [round(0.05 * k, 2) for k in range(1, 11)]


def _constant_classifier(p1):
    """Forest whose probability of class 1 is ``p1`` everywhere (k of 20 trees vote 1)."""
    k = round(20 * p1)
    trees = [hand_tree([-1], [np.nan], [-1], [-1], [[0.0, 1.0] if t < k else [1.0, 0.0]])
             for t in range(20)]
    return hand_forest(trees, ["a"], [0], [1], task=CLASSIFICATION)


def _cp(threshold, forest, alpha=0.25):
    return ConformalPredictor(alpha, (0.1,), threshold, forest.training_fingerprint)


@pytest.fixture(scope="module")
def high_margin():
    ds, _ = stack_from_config(synthgen.moderate_stack_config(seed=7, separation=10.0))
    return ds


def test_threshold_examples():
    assert threshold_rank(3, 0.25) == 3
    assert conformal_threshold([0.3, 0.1, 0.2], 0.25) == 0.3
    assert conformal_threshold([0.1, 0.2, 0.3, 0.4], 0.5) == 0.3
    assert conformal_threshold([0.2, 0.1], 0.25) == math.inf
    with pytest.raises(ValueError):
        threshold_rank(5, 0.0)


def test_threshold_matches_order_statistic_oracle():
    rng = np.random.default_rng(0)
    for n in range(1, 51):
        scores = rng.random(n).round(2)
        for a in ALPHAS:
            assert conformal_threshold(scores, a) == order_statistic_threshold(scores.tolist(), a)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.sampled_from(ALPHAS),
       st.sampled_from(ALPHAS))
def test_threshold_nested_in_alpha(scores, a, b):
    lo, hi = min(a, b), max(a, b)
    assert conformal_threshold(scores, lo) >= conformal_threshold(scores, hi)


def test_predict_set_examples():
    certain = _constant_classifier(1.0)
    s = predict_set(_cp(0.0, certain), certain, {"a": 0.5})
    assert s.members == [1]
    coin = _constant_classifier(0.5)
    assert predict_set(_cp(0.6, coin), coin, [0.5]).members == [0, 1]
    assert predict_set(_cp(math.inf, coin), coin, [0.5]).members == [0, 1]
    assert len(predict_set(_cp(0.4, coin), coin, [0.5])) == 0
    assert predict_set(_cp(0.4, coin), coin, [0.5]).empty


def test_fingerprint_checked():
    a, b = _constant_classifier(1.0), _constant_classifier(0.0)
    b.training_fingerprint = "other"
    with pytest.raises(FingerprintMismatchError):
        predict_set(_cp(0.1, a), b, [0.0])


def test_calibration_scores_and_disjoint_rows(high_margin):
    forest, cp = split_train_calibrate(high_margin, 0.5, ForestParams(n_trees=50), alpha=0.25, seed=3)
    assert set(cp.train_rows).isdisjoint(cp.calibration_rows)
    assert len(cp.train_rows) + cp.n_cal == len(high_margin)
    cal = np.array(cp.calibration_rows)
    p1 = forest.predict_array(high_margin.X[cal])
    y = high_margin.labels[cal]
    expected = sorted(np.where(y == 1, 1 - p1, p1).tolist())
    assert list(cp.calibration_scores) == expected
    assert cp.threshold == order_statistic_threshold(expected, 0.25)


def test_in_sample_coverage_bound(high_margin):
    forest, cp = split_train_calibrate(high_margin, 0.5, ForestParams(n_trees=50), alpha=0.25, seed=4)
    cal = np.array(cp.calibration_rows)
    cov, _ = empirical_coverage(cp, forest, high_margin.X[cal], high_margin.labels[cal])
    assert cov >= 0.75


def test_high_margin_sets_are_singletons(high_margin):
    # empty sets appear only when the threshold falls below min(p, 1 - p),
    # which a few rows with split votes can reach
    forest, cp = split_train_calibrate(high_margin, 0.5, ForestParams(n_trees=200), alpha=0.25, seed=5)
    test = np.setdiff1d(np.arange(len(high_margin)), cp.calibration_rows)
    sets = predict_sets(cp, forest, high_margin.X[test])
    sizes = np.array([len(s) for s in sets])
    assert (sizes <= 1).all()
    assert (sizes == 1).mean() >= 0.95
    assert all(s.empty == (len(s) == 0) for s in sets)


def test_alpha_10_precise_on_high_margin():
    covs, sizes = [], []
    for r in range(8):
        ds, _ = stack_from_config(synthgen.moderate_stack_config(seed=50 + r, separation=10.0))
        fresh, _ = stack_from_config(synthgen.moderate_stack_config(seed=90 + r, separation=10.0))
        forest, cp = split_train_calibrate(ds, 0.5, ForestParams(n_trees=100, seed=r), alpha=0.1, seed=r)
        cov, size = empirical_coverage(cp, forest, fresh.X, fresh.labels)
        covs.append(cov)
        sizes.append(size)
    assert np.mean(covs) >= 0.90
    assert np.mean(sizes) < 1.2


def test_nested_sets_exact(high_margin):
    forest, cp = split_train_calibrate(high_margin, 0.5, ForestParams(n_trees=50), alpha=0.3, seed=1)
    for hi, lo in zip(ALPHAS[::-1], ALPHAS[::-1][1:]):
        big = predict_sets(cp.with_alpha(lo), forest, high_margin.X)
        small = predict_sets(cp.with_alpha(hi), forest, high_margin.X)
        assert all(set(s.members) <= set(b.members) for s, b in zip(small, big))


def test_split_degenerate():
    ds, _ = stack_from_config(synthgen.moderate_stack_config(seed=0))
    tiny = ds.subset(np.r_[np.flatnonzero(ds.labels == 1)[:1], np.flatnonzero(ds.labels == 0)[:5]])
    with pytest.raises(SplitDegenerateError):
        split_train_calibrate(tiny, 0.5, ForestParams(n_trees=5), max_tries=20)
    with pytest.raises(SplitDegenerateError):
        split_train_calibrate(ds, 1.0)


def test_json_round_trip(high_margin):
    _, cp = split_train_calibrate(high_margin, 0.5, ForestParams(n_trees=10), alpha=0.25)
    assert ConformalPredictor.from_dict(cp.to_dict()) == cp
    inf = ConformalPredictor(0.01, (0.1, 0.2), math.inf, "x")
    assert inf.to_dict()["threshold"] is None
    assert ConformalPredictor.from_dict(inf.to_dict()) == inf


def test_calibrate_rejects_regression():
    with pytest.raises(ValueError):
        calibrate(hand_forest([leaf(1.0)], ["a"], [0], [1]), np.zeros((2, 1)), [0, 1], 0.1)


def test_coverage_small_monte_carlo():
    covs = {0.25: [], 0.10: []}
    for r in range(30):
        out, nested = coverage_replication(r, [0.25, 0.10], n_trees=100)
        assert nested
        for a in covs:
            covs[a].append(out[a][0])
    for a, v in covs.items():
        se = np.std(v, ddof=1) / np.sqrt(len(v))
        assert np.mean(v) >= 1 - a - 3 * se
