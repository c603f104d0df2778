"""
Spoof, SiF and secondary spoof classification losses and the two step
objectives of the doubly adversarial schedule.
"""

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from dasnlab.errors.exceptions import ConfigurationError, DataError, LabelError, NonFiniteError
from dasnlab.services.autodiff import (
    Tape,
    Tensor,
    clamp_min,
    constant,
    gather_rows,
    log_softmax,
    reduce_mean,
)
from dasnlab.services.model import (
    DasnModel,
    classify_spoof,
    encode,
    head_forward,
    secondary_classify,
)

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)
# divergence label for failures in the shared encoder pass
ENCODER_TERM = "encoder"

DEFAULT_LAMBDAS = {
    "identity": 0.05,
    "environment": 0.08,
    "sensor": 0.08,
    "domain": 0.08,
}


@dataclass
class LossWeights:
    """Per-factor weights lambda_sif^k."""

    sif: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def for_factors(
        cls, factors: Iterable[str], overrides: Optional[Mapping[str, float]] = None
    ) -> "LossWeights":
        overrides = dict(overrides or {})
        weights = {}
        for k in factors:
            if k in overrides:
                weights[k] = float(overrides[k])
            elif k in DEFAULT_LAMBDAS:
                weights[k] = DEFAULT_LAMBDAS[k]
            else:
                raise ConfigurationError(f"No lambda weight for factor '{k}'")
        return cls(weights)

    def __post_init__(self):
        for k, w in self.sif.items():
            if not (w >= 0.0 and math.isfinite(w)):
                raise ConfigurationError(f"lambda for '{k}' must be a nonnegative float, got {w}")

    def __getitem__(self, k: str) -> float:
        try:
            return self.sif[k]
        except KeyError:
            raise ConfigurationError(f"No lambda weight for active factor '{k}'") from None


@dataclass
class Batch:
    """One mini-batch: inputs, spoof labels, and SiF labels per factor."""

    x: np.ndarray
    y: np.ndarray
    factor_labels: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return int(self.x.shape[0])

    def labels(self, k: str) -> np.ndarray:
        """Labels of factor k for this batch."""
        if k not in self.factor_labels:
            raise DataError(f"Batch carries no labels for factor '{k}'")
        return self.factor_labels[k]


@contextmanager
def _term(name: str):
    try:
        yield
    except NonFiniteError as exc:
        raise NonFiniteError(exc.message, op=exc.op, term=name) from exc


def _negative_log_likelihood(logits: Tensor, labels: np.ndarray) -> Tensor:
    logp = clamp_min(gather_rows(log_softmax(logits), labels), LOG_FLOOR)
    return -reduce_mean(logp)


def _check_labels(labels, n_classes: int, what: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise DataError(f"{what} labels must be a nonempty vector")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise LabelError(f"{what} labels must be integers")
        labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(
            f"{what} label out of range 0..{n_classes - 1}",
            payload={"min": int(labels.min()), "max": int(labels.max())},
        )
    return labels


def spoof_cls_loss(logits: Tensor, y) -> Tensor:
    """
    Mean binary cross-entropy of the 2-class softmax against y in {0, 1}.

    The class-1 softmax probability plays the role of p, and class 0 carries
    1 - p, so the loss is the mean of -log softmax(logits)[y], with log
    probabilities clamped at log(1e-12).
    """
    y = _check_labels(y, 2, "spoof")
    return _negative_log_likelihood(logits, y)


def secondary_cls_loss(logits: Tensor, y) -> Tensor:
    """Same contract as `spoof_cls_loss`, applied to S(I^k(E(x)))."""
    return spoof_cls_loss(logits, y)


def sif_cls_loss(logits: Tensor, f) -> Tensor:
    """Mean cross-entropy over the N^k classes of one factor."""
    f = _check_labels(f, logits.shape[-1], "SiF")
    return _negative_log_likelihood(logits, f)


def step1_objective(
    model: DasnModel,
    batch: Batch,
    weights: LossWeights,
    tape: Tape,
    include_secondary: bool = True,
) -> Tuple[Tensor, Dict[str, float]]:
    """
    Objective whose gradient, applied to {E, C, S}, is Step 1.

    L_cls + sum_k L_scls(k) + sum_k lambda_k * L_sif(k), where the SiF path
    passes through a GRL placed between E and I^k, so E ascends L_sif.

    Returns:
        Tuple of (scalar objective, per-term loss values).
    """
    terms: Dict[str, float] = {}
    with _term(ENCODER_TERM):
        features = encode(model, batch.x, tape)
    with _term("L_cls"):
        total = spoof_cls_loss(classify_spoof(model, features), batch.y)
    terms["L_cls"] = total.item()

    for k in model.factors:
        labels = batch.labels(k)
        with _term(f"L_sif.{k}"):
            _, sif_logits = head_forward(model, k, features, reverse_into_encoder=True)
            l_sif = sif_cls_loss(sif_logits, labels)
            total = total + weights[k] * l_sif
        terms[f"L_sif.{k}"] = l_sif.item()
        if include_secondary:
            with _term(f"L_scls.{k}"):
                l_scls = secondary_cls_loss(secondary_classify(model, k, features), batch.y)
                total = total + l_scls
            terms[f"L_scls.{k}"] = l_scls.item()
    return total, terms


def step2_objective(
    model: DasnModel,
    batch: Batch,
    weights: LossWeights,
    tape: Tape,
    include_secondary: bool = True,
) -> Tuple[Tensor, Dict[str, float]]:
    """
    Objective whose gradient, applied to {I^k, D^k}, is Step 2.

    sum_k lambda_k * L_sif(k) + sum_k L_scls(k), where the secondary path
    passes through a GRL placed between I^k and S, so I^k ascends L_scls.
    With no active factor the objective is the constant 0.
    """
    terms: Dict[str, float] = {}
    if not model.factors:
        return constant(0.0), terms

    with _term(ENCODER_TERM):
        features = encode(model, batch.x, tape)
    total: Optional[Tensor] = None
    for k in model.factors:
        labels = batch.labels(k)
        with _term(f"L_sif.{k}"):
            _, sif_logits = head_forward(model, k, features)
            l_sif = sif_cls_loss(sif_logits, labels)
            weighted = weights[k] * l_sif
            total = weighted if total is None else total + weighted
        terms[f"L_sif.{k}"] = l_sif.item()
        if include_secondary:
            with _term(f"L_scls.{k}"):
                logits = secondary_classify(model, k, features, reverse_into_intermediate=True)
                l_scls = secondary_cls_loss(logits, batch.y)
                total = total + l_scls
            terms[f"L_scls.{k}"] = l_scls.item()
    return total, terms
