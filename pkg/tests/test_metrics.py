from fractions import Fraction

import numpy as np
import pytest

from dasnlab.errors.exceptions import MetricError
from dasnlab.services.metrics import (
    ScoreSet,
    auc,
    candidate_thresholds,
    evaluate,
    far_frr,
    hter,
    roc_points,
)


def scoreset(genuine, spoof):
    return ScoreSet(
        np.concatenate([genuine, spoof]),
        np.concatenate([np.ones(len(genuine)), np.zeros(len(spoof))]),
    )


def pairwise_auc(s):
    wins = ties = 0
    for g in s.genuine:
        for x in s.spoof:
            wins += g > x
            ties += g == x
    return (wins + 0.5 * ties) / (s.genuine.size * s.spoof.size)


def sweep_hter(s):
    best = None
    for t in candidate_thresholds(s):
        far = Fraction(int(np.sum(s.spoof >= t)), s.spoof.size)
        frr = Fraction(int(np.sum(s.genuine < t)), s.genuine.size)
        key = (abs(far - frr), far + frr, t)
        if best is None or key < best[0]:
            best = (key, (far + frr) / 2)
    return float(best[1]), best[0][2]


def random_scoreset(rng):
    n = int(rng.integers(2, 51))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    # coarse grid so ties are common
    scores = np.round(rng.random(n), int(rng.integers(1, 4)))
    return ScoreSet(scores, labels)


def test_auc_hand_case():
    s = scoreset([0.9, 0.8, 0.4], [0.7, 0.3, 0.2])
    assert auc(s) == pytest.approx(8 / 9, abs=1e-15)


def test_auc_extremes():
    assert auc(scoreset([0.9, 0.8], [0.1, 0.2])) == 1.0
    assert auc(scoreset([0.1], [0.9])) == 0.0
    assert auc(scoreset([0.5, 0.5], [0.5])) == 0.5


def test_metrics_match_brute_force_oracles():
    rng = np.random.default_rng(31)
    for _ in range(1000):
        s = random_scoreset(rng)
        assert auc(s) == pairwise_auc(s)
        value, threshold = hter(s)
        expected, expected_threshold = sweep_hter(s)
        assert abs(value - expected) <= 1e-12
        assert threshold == expected_threshold


def test_far_frr_edges():
    s = scoreset([0.9, 0.6], [0.4, 0.1])
    assert far_frr(s, 0.0) == (1.0, 0.0)
    assert far_frr(s, 0.95) == (0.0, 1.0)
    assert far_frr(s, 0.5) == (0.0, 0.0)
    # a score equal to the threshold is accepted
    assert far_frr(s, 0.4) == (0.5, 0.0)
    assert far_frr(s, 0.9) == (0.0, 0.5)


def test_hter_separated_and_uninformative():
    value, threshold = hter(scoreset([0.9, 0.8], [0.2, 0.1]))
    assert value == 0.0
    assert 0.2 < threshold < 0.8
    value, _ = hter(scoreset([0.5, 0.5, 0.5], [0.5, 0.5]))
    assert value == 0.5


def test_inverted_scores_give_full_error():
    value, _ = hter(scoreset([0.1, 0.2], [0.8, 0.9]))
    assert value == 1.0
    assert auc(scoreset([0.1, 0.2], [0.8, 0.9])) == 0.0


def test_auc_flip_and_monotone_transform(rng):
    for _ in range(100):
        s = random_scoreset(rng)
        flipped = ScoreSet(s.scores, 1 - s.labels)
        assert auc(flipped) == pytest.approx(1.0 - auc(s), abs=1e-12)
        stretched = ScoreSet(np.exp(3.0 * s.scores) - 7.0, s.labels)
        assert auc(stretched) == auc(s)


def test_roc_runs_from_origin_to_corner():
    points = roc_points(scoreset([0.9, 0.8, 0.4], [0.7, 0.3, 0.2]))
    assert points[0] == (0.0, 0.0)
    assert points[-1] == (1.0, 1.0)
    fprs, tprs = zip(*points)
    assert list(fprs) == sorted(fprs)
    assert list(tprs) == sorted(tprs)


def test_evaluate_is_consistent():
    s = scoreset([0.9, 0.8, 0.4], [0.7, 0.3, 0.2])
    report = evaluate(s)
    assert report.auc == auc(s)
    assert report.hter == (report.far + report.frr) / 2
    assert (report.hter, report.eer_threshold) == hter(s)
    assert far_frr(s, report.eer_threshold) == (report.far, report.frr)
    assert set(report.to_row()) == {"auc", "hter", "eer_threshold", "far", "frr"}


def test_infinite_threshold_serializes():
    report = evaluate(scoreset([0.5], [0.5]))
    assert report.eer_threshold in (-np.inf, np.inf)
    assert report.to_dict()["eer_threshold"] in ("-inf", "inf")


def test_invalid_score_sets():
    with pytest.raises(MetricError):
        ScoreSet([], [])
    with pytest.raises(MetricError):
        ScoreSet([0.1, 0.2], [1])
    with pytest.raises(MetricError):
        ScoreSet([0.1], [2])
    with pytest.raises(MetricError):
        ScoreSet([np.nan], [1])
    with pytest.raises(MetricError):
        auc(ScoreSet([0.1, 0.2], [1, 1]))
    with pytest.raises(MetricError):
        hter(ScoreSet([0.1, 0.2], [0, 0]))
