"""
Evaluation arithmetic: ROC, AUC, FAR/FRR, and HTER at the EER threshold.

Scores are genuine-class probabilities; label 1 is genuine, label 0 is
spoof, and a sample is accepted when its score is >= the threshold.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy import stats

from dasnlab.errors.exceptions import MetricError


@dataclass
class ScoreSet:
    """Paired scores and binary labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels).reshape(-1)
        if self.scores.size == 0:
            raise MetricError("Score set is empty")
        if self.scores.shape != self.labels.shape:
            raise MetricError(
                f"{self.scores.size} scores but {self.labels.size} labels"
            )
        if not np.all(np.isin(self.labels, (0, 1))):
            raise MetricError("Labels must be 0 (spoof) or 1 (genuine)")
        if not np.all(np.isfinite(self.scores)):
            raise MetricError("Scores must be finite")
        self.labels = self.labels.astype(np.int64)

    @property
    def genuine(self) -> np.ndarray:
        return self.scores[self.labels == 1]

    @property
    def spoof(self) -> np.ndarray:
        return self.scores[self.labels == 0]

    def require_both_classes(self) -> None:
        if self.genuine.size == 0 or self.spoof.size == 0:
            raise MetricError("Metric needs at least one genuine and one spoof score")


@dataclass
class EvalReport:
    auc: float
    hter: float
    eer_threshold: float
    far: float
    frr: float
    roc: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "auc": self.auc,
            "hter": self.hter,
            "eer_threshold": _json_float(self.eer_threshold),
            "far": self.far,
            "frr": self.frr,
            "roc": [{"fpr": fpr, "tpr": tpr} for fpr, tpr in self.roc],
        }

    def to_row(self) -> Dict[str, Any]:
        return {
            "auc": self.auc,
            "hter": self.hter,
            "eer_threshold": _json_float(self.eer_threshold),
            "far": self.far,
            "frr": self.frr,
        }


def _json_float(value: float):
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def auc(scores: ScoreSet) -> float:
    """
    Mann-Whitney AUC: P(genuine > spoof) + 0.5 P(tie).

    Raises:
        MetricError: If either class is missing.
    """
    scores.require_both_classes()
    genuine, spoof = scores.genuine, scores.spoof
    ranks = stats.rankdata(np.concatenate([genuine, spoof]), method="average")
    n_g, n_s = genuine.size, spoof.size
    u = ranks[:n_g].sum() - n_g * (n_g + 1) / 2.0
    return float(u / (n_g * n_s))


def far_frr(scores: ScoreSet, threshold: float) -> Tuple[float, float]:
    """
    Fraction of spoof scores accepted and of genuine scores rejected.

    A class with no samples contributes a rate of 0.
    """
    spoof, genuine = scores.spoof, scores.genuine
    far = float(np.mean(spoof >= threshold)) if spoof.size else 0.0
    frr = float(np.mean(genuine < threshold)) if genuine.size else 0.0
    return far, frr


def candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    """-inf, midpoints of adjacent sorted unique scores, +inf."""
    unique = np.unique(scores.scores)
    mids = (unique[:-1] + unique[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def hter(scores: ScoreSet) -> Tuple[float, float]:
    """
    HTER at the EER threshold.

    The threshold minimizes |FAR - FRR|; ties go to the smaller FAR + FRR,
    then to the smaller threshold. Comparisons use exact integer counts.

    Returns:
        Tuple of (hter, threshold).
    """
    threshold, far, frr = _eer_point(scores)
    return (far + frr) / 2.0, threshold


def _eer_point(scores: ScoreSet) -> Tuple[float, float, float]:
    """Threshold where FAR and FRR are closest, with both rates."""
    scores.require_both_classes()
    genuine, spoof = np.sort(scores.genuine), np.sort(scores.spoof)
    n_g, n_s = genuine.size, spoof.size
    cand = candidate_thresholds(scores)
    accepted = n_s - np.searchsorted(spoof, cand, side="left")
    rejected = np.searchsorted(genuine, cand, side="left")
    gap = np.abs(accepted * n_g - rejected * n_s)
    total = accepted * n_g + rejected * n_s
    best = np.lexsort((cand, total, gap))[0]
    return float(cand[best]), float(accepted[best] / n_s), float(rejected[best] / n_g)


def roc_points(scores: ScoreSet) -> List[Tuple[float, float]]:
    """(FPR, TPR) for thresholds sweeping from above the maximum down to each unique score."""
    scores.require_both_classes()
    genuine, spoof = np.sort(scores.genuine), np.sort(scores.spoof)
    thresholds = np.concatenate([[np.inf], np.unique(scores.scores)[::-1]])
    tpr = (genuine.size - np.searchsorted(genuine, thresholds, side="left")) / genuine.size
    fpr = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    return [(float(f), float(t)) for f, t in zip(fpr, tpr)]


def evaluate(scores: ScoreSet) -> EvalReport:
    """AUC, EER-threshold HTER with its FAR/FRR, and the ROC curve."""
    threshold, far, frr = _eer_point(scores)
    return EvalReport(
        auc=auc(scores),
        hter=(far + frr) / 2.0,
        eer_threshold=threshold,
        far=float(far),
        frr=float(frr),
        roc=roc_points(scores),
    )
