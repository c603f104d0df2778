"""
Linear probes on frozen encoder features.

A probe is a fresh softmax classifier trained on E(x) to predict one label;
its held-out accuracy measures how decodable that label still is.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from dasnlab.errors.exceptions import DataError, DimensionError
from dasnlab.services.autodiff import Tape, constant
from dasnlab.services.losses import sif_cls_loss
from dasnlab.services.model import DOMAIN_FACTOR, SIF_FACTORS, DasnModel, encode
from dasnlab.services.nn import AdamState, DenseLayer, ParamGroup, adam_step, mlp_forward
from dasnlab.services.rng import Xoshiro256StarStar
from dasnlab.services.synthdata import FactorDataset

logger = logging.getLogger(__name__)

MIN_PER_CLASS = 10
TEST_FRACTION = 0.2


@dataclass
class ProbeResult:
    accuracy: float
    majority: float
    classes: int
    n_train: int
    n_test: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "majority": self.majority,
            "classes": self.classes,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


@dataclass
class ProbeReport:
    """Probe accuracies of one encoder."""

    label: str
    spoof: ProbeResult
    factors: Dict[str, ProbeResult] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "spoof": self.spoof.to_dict(),
            "factors": {k: r.to_dict() for k, r in self.factors.items()},
        }

    def rows(self) -> List[Dict[str, Any]]:
        rows = [{"model": self.label, "factor": "spoof", **self.spoof.to_dict()}]
        for k, r in self.factors.items():
            rows.append({"model": self.label, "factor": k, **r.to_dict()})
        return rows


@dataclass
class SuppressionReport:
    """Probe reports of two encoders and their (baseline - target) deltas."""

    baseline: ProbeReport
    target: ProbeReport
    deltas: Dict[str, float]
    spoof_delta: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "baseline": self.baseline.to_dict(),
            "target": self.target.to_dict(),
            "deltas": dict(self.deltas),
            "spoof_delta": self.spoof_delta,
        }

    def rows(self) -> List[Dict[str, Any]]:
        return self.baseline.rows() + self.target.rows()


def extract_features(
    model: DasnModel, dataset: FactorDataset
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    E(x) for every sample, in dataset order, without recording a tape.

    Returns:
        Tuple of (features [n x feature_dim], labels keyed by "y" and factor name).
    """
    if dataset.input_dim != model.config.input_dim:
        raise DimensionError(
            f"Model expects input_dim {model.config.input_dim}, dataset has {dataset.input_dim}"
        )
    features = encode(model, constant(dataset.x)).data.copy()
    labels = {"y": dataset.y.copy()}
    for k in SIF_FACTORS + (DOMAIN_FACTOR,):
        labels[k] = dataset.factor_labels(k).copy()
    return features, labels


def stratified_split(labels: np.ndarray, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic 80/20 split taken separately inside every class."""
    rng = Xoshiro256StarStar.from_keys(seed, "probe-split")
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = max(1, int(round(TEST_FRACTION * idx.size)))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def train_probe(
    features: np.ndarray,
    labels: np.ndarray,
    seed: int,
    epochs: int = 200,
    lr: float = 0.05,
    hidden_dim: Optional[int] = None,
) -> ProbeResult:
    """
    Fit a multinomial logistic probe (or a one-hidden-layer MLP probe) with
    full-batch Adam and report accuracy on the held-out 20%.

    Raises:
        DataError: If fewer than 2 classes are present or a class has fewer
            than 10 samples.
    """
    labels = np.asarray(labels)
    classes, encoded = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise DataError("Probe needs at least 2 classes")
    counts = np.bincount(encoded)
    if counts.min() < MIN_PER_CLASS:
        raise DataError(
            f"Probe class starvation: smallest class has {int(counts.min())} samples, "
            f"need {MIN_PER_CLASS}"
        )

    train_idx, test_idx = stratified_split(encoded, seed)
    x = np.asarray(features, dtype=np.float64)
    mean = x[train_idx].mean(axis=0)
    std = x[train_idx].std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    x = (x - mean) / std

    rng = Xoshiro256StarStar.from_keys(seed, "probe-init")
    d, n_classes = x.shape[1], classes.size
    if hidden_dim:
        layers = [
            DenseLayer.xavier("probe.0", d, hidden_dim, "relu", rng),
            DenseLayer.xavier("probe.1", hidden_dim, n_classes, "none", rng),
        ]
    else:
        layers = [DenseLayer.xavier("probe.0", d, n_classes, "none", rng)]
    group = ParamGroup("probe", layers)
    state = AdamState(lr=lr)

    x_train, y_train = x[train_idx], encoded[train_idx]
    for _ in range(epochs):
        tape = Tape()
        loss = sif_cls_loss(mlp_forward(layers, constant(x_train), tape), y_train)
        adam_step(state, [group], tape.backward(loss))

    predictions = mlp_forward(layers, constant(x[test_idx])).data.argmax(axis=1)
    y_test = encoded[test_idx]
    return ProbeResult(
        accuracy=float(np.mean(predictions == y_test)),
        majority=float(np.bincount(y_test).max() / y_test.size),
        classes=int(n_classes),
        n_train=int(train_idx.size),
        n_test=int(test_idx.size),
    )


def probe_model(
    model: DasnModel,
    dataset: FactorDataset,
    label: str,
    factors: Sequence[str] = SIF_FACTORS,
    seed: int = 1,
    epochs: int = 200,
    lr: float = 0.05,
    hidden_dim: Optional[int] = None,
) -> ProbeReport:
    """Spoof probe plus one probe per factor with at least two classes in the dataset."""
    features, labels = extract_features(model, dataset)
    spoof = train_probe(features, labels["y"], seed, epochs, lr, hidden_dim)
    results = {}
    for k in factors:
        if np.unique(labels[k]).size < 2:
            logger.warning(f"Skipping {k} probe for {label}: single class in dataset")
            continue
        results[k] = train_probe(features, labels[k], seed, epochs, lr, hidden_dim)
    return ProbeReport(label, spoof, results)


def suppression_report(
    baseline_model: DasnModel,
    dasn_model: DasnModel,
    dataset: FactorDataset,
    factors: Sequence[str] = SIF_FACTORS,
    seed: int = 1,
    epochs: int = 200,
    lr: float = 0.05,
    hidden_dim: Optional[int] = None,
    labels: Tuple[str, str] = ("baseline", "dasn"),
) -> SuppressionReport:
    """
    Probe both encoders on the same samples with the same seeds.

    Deltas are baseline accuracy minus target accuracy; a positive delta
    means the target encoder carries less of that factor.
    """
    if baseline_model.config.input_dim != dasn_model.config.input_dim:
        raise DimensionError("Models being compared must share input_dim")
    base = probe_model(baseline_model, dataset, labels[0], factors, seed, epochs, lr, hidden_dim)
    target = probe_model(dasn_model, dataset, labels[1], factors, seed, epochs, lr, hidden_dim)
    deltas = {
        k: base.factors[k].accuracy - target.factors[k].accuracy
        for k in base.factors
        if k in target.factors
    }
    return SuppressionReport(
        baseline=base,
        target=target,
        deltas=deltas,
        spoof_delta=base.spoof.accuracy - target.spoof.accuracy,
    )
