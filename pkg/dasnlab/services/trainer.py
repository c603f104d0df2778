"""
Two-step doubly adversarial training loop.

Step 1 updates {E, C, S} on `step1_objective`; Step 2 updates every
{I^k, D^k} on `step2_objective`. Each step owns its Adam state, and the
groups a step does not list are left bitwise untouched.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from dasnlab.config import TrainConfig
from dasnlab.errors.exceptions import ConfigurationError, DataError, DivergenceError, NonFiniteError
from dasnlab.services.autodiff import Tape
from dasnlab.services.losses import Batch, step1_objective, step2_objective
from dasnlab.services.model import DasnConfig, DasnModel
from dasnlab.services.nn import AdamState, adam_step
from dasnlab.services.rng import Xoshiro256StarStar
from dasnlab.services.synthdata import FactorDataset

logger = logging.getLogger(__name__)


def history_columns(factors: Sequence[str], include_secondary: bool) -> List[str]:
    """Loss columns recorded for the active factors, L_cls first."""
    columns = ["L_cls"]
    for k in factors:
        columns.append(f"L_sif.{k}")
        if include_secondary:
            columns.append(f"L_scls.{k}")
    return columns


class LossHistory:
    """Per-iteration loss values, one column per term."""

    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        self.values: Dict[str, List[float]] = {c: [] for c in self.columns}

    def __len__(self):
        return len(self.values["L_cls"])

    def append(self, terms: Dict[str, float]) -> None:
        """Record one iteration; every column must be present."""
        missing = [c for c in self.columns if c not in terms]
        if missing:
            raise DataError(f"Iteration is missing loss terms {missing}")
        for c in self.columns:
            self.values[c].append(float(terms[c]))

    def series(self, column: str) -> np.ndarray:
        try:
            return np.array(self.values[column], dtype=np.float64)
        except KeyError:
            raise DataError(f"History has no column '{column}'") from None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({c: self.values[c] for c in self.columns})
        frame.insert(0, "iteration", np.arange(1, len(self) + 1))
        return frame

    def to_dict(self) -> Dict[str, List[float]]:
        return {c: list(v) for c, v in self.values.items()}

    @classmethod
    def from_dict(cls, columns: Sequence[str], values: Dict[str, List[float]]) -> "LossHistory":
        history = cls(columns)
        for c in history.columns:
            history.values[c] = [float(v) for v in values.get(c, [])]
        if len({len(v) for v in history.values.values()}) > 1:
            raise DataError("History columns have different lengths")
        return history


@dataclass
class TrainState:
    """Everything needed to continue a run bit-for-bit."""

    model: DasnModel
    adam_step1: AdamState
    adam_step2: AdamState
    history: LossHistory
    rng: Xoshiro256StarStar
    epoch: int = 0
    iteration: int = 0


@dataclass
class FactorTrend:
    slope: float
    monotonicity: float
    window_means: List[float] = field(default_factory=list)


def model_config_for(
    config: TrainConfig, dataset: FactorDataset, feature_dim: int = 32, hidden_dim: int = 32
) -> DasnConfig:
    """Architecture for training `config` on `dataset`."""
    return DasnConfig(
        input_dim=dataset.input_dim,
        feature_dim=feature_dim,
        hidden_dim=hidden_dim,
        factors=tuple(config.factors),
        class_counts={k: dataset.class_counts[k] for k in config.factors},
    )


def init_state(config: TrainConfig, model_config: DasnConfig) -> TrainState:
    """Fresh model, Adam states and shuffling stream for a run."""
    model = DasnModel.initialize(model_config, config.seed)
    return TrainState(
        model=model,
        adam_step1=AdamState(lr=config.lr),
        adam_step2=AdamState(lr=config.lr),
        history=LossHistory(history_columns(model_config.factors, config.include_secondary)),
        rng=Xoshiro256StarStar.from_keys(config.seed, "shuffle"),
    )


class DasnTrainer:
    """
    Runs the alternating schedule for one training configuration.
    """

    def __init__(self, config: TrainConfig, task: Optional[str] = None):
        self.config = config
        self.weights = config.weights()
        self.batch_size = config.resolved_batch_size(task)

    def step1_groups(self, model: DasnModel) -> List[str]:
        """Parameter groups Step 1 updates."""
        if self.config.include_secondary and model.factors:
            return ["E", "C", "S"]
        return ["E", "C"]

    def step2_groups(self, model: DasnModel) -> List[str]:
        return model.head_group_names()

    def _diverged(self, iteration: int, exc: NonFiniteError) -> DivergenceError:
        term = exc.term or exc.op or "unknown"
        logger.error(f"Non-finite value at iteration {iteration} in {term}")
        return DivergenceError(iteration, term)

    def run_step1(
        self, state: TrainState, batch: Batch, iteration: Optional[int] = None
    ) -> Dict[str, float]:
        """Update {E, C, S}; discrimination heads only pass gradients."""
        tape = Tape()
        try:
            objective, terms = step1_objective(
                state.model, batch, self.weights, tape, self.config.include_secondary
            )
            grads = tape.backward(objective)
        except NonFiniteError as exc:
            raise self._diverged(iteration or state.iteration + 1, exc) from exc
        adam_step(state.adam_step1, state.model.select(self.step1_groups(state.model)), grads)
        return terms

    def run_step2(
        self, state: TrainState, batch: Batch, iteration: Optional[int] = None
    ) -> Dict[str, float]:
        """
        Update every {I^k, D^k}; S and E only pass gradients.

        `iteration` names the batch in divergence reports and defaults to the
        iteration about to be recorded.
        """
        names = self.step2_groups(state.model)
        if not names:
            return {}
        tape = Tape()
        try:
            objective, terms = step2_objective(
                state.model, batch, self.weights, tape, self.config.include_secondary
            )
            grads = tape.backward(objective)
        except NonFiniteError as exc:
            raise self._diverged(iteration or state.iteration + 1, exc) from exc
        adam_step(state.adam_step2, state.model.select(names), grads)
        return terms

    def train_iteration(self, state: TrainState, batch: Batch) -> TrainState:
        """
        Step 1 then Step 2 on the same mini-batch.

        The history records the loss values seen by Step 1.
        """
        terms = self.run_step1(state, batch)
        self.run_step2(state, batch)
        state.history.append(terms)
        state.iteration += 1
        logger.debug(f"iteration {state.iteration}: {terms}")
        return state

    def _check_compatible(self, state: TrainState, dataset: FactorDataset) -> None:
        mc = state.model.config
        if mc.input_dim != dataset.input_dim:
            raise ConfigurationError(
                f"Model expects input_dim {mc.input_dim}, dataset has {dataset.input_dim}"
            )
        if tuple(mc.factors) != tuple(self.config.factors):
            raise ConfigurationError(
                f"Model factors {mc.factors} differ from configured {tuple(self.config.factors)}"
            )
        for k in mc.factors:
            if mc.class_counts[k] != dataset.class_counts[k]:
                raise ConfigurationError(
                    f"Factor {k}: model has {mc.class_counts[k]} classes, "
                    f"dataset has {dataset.class_counts[k]}"
                )

    def train(
        self,
        dataset: FactorDataset,
        state: TrainState,
        on_epoch_end: Optional[Callable[[TrainState], None]] = None,
    ) -> TrainState:
        """
        Train from `state.epoch` up to `config.epochs`.

        Args:
            dataset: Training samples.
            state: Fresh or resumed training state, modified in place.
            on_epoch_end: Called with the state after every epoch.

        Returns:
            The final state.
        """
        if len(dataset) == 0:
            raise DataError("Training dataset is empty")
        self._check_compatible(state, dataset)
        factors = state.model.factors
        n = len(dataset)

        for epoch in range(state.epoch, self.config.epochs):
            perm = state.rng.permutation(n)
            batches = [
                dataset.batch(perm[i:i + self.batch_size], factors)
                for i in range(0, n, self.batch_size)
            ]
            start = len(state.history)
            if self.config.alternation == "batch":
                for batch in batches:
                    self.train_iteration(state, batch)
            else:
                first = state.iteration
                for batch in batches:
                    state.history.append(self.run_step1(state, batch))
                    state.iteration += 1
                for b, batch in enumerate(batches):
                    self.run_step2(state, batch, iteration=first + b + 1)
            state.epoch = epoch + 1

            means = {
                c: float(np.mean(state.history.values[c][start:])) for c in state.history.columns
            }
            logger.info(
                f"epoch {state.epoch}/{self.config.epochs} "
                + " ".join(f"{c}={v:.4f}" for c, v in means.items())
            )
            if on_epoch_end is not None:
                on_epoch_end(state)
        return state


def train(
    config: TrainConfig,
    dataset: FactorDataset,
    feature_dim: int = 32,
    hidden_dim: int = 32,
    task: Optional[str] = None,
    on_epoch_end: Optional[Callable[[TrainState], None]] = None,
) -> TrainState:
    """Initialize a model for `dataset` and run the full schedule."""
    if len(dataset) == 0:
        raise DataError("Training dataset is empty")
    state = init_state(config, model_config_for(config, dataset, feature_dim, hidden_dim))
    return DasnTrainer(config, task).train(dataset, state, on_epoch_end)


def divergence_report(
    history: LossHistory,
    factors: Optional[Sequence[str]] = None,
    windows: int = 10,
    skip_fraction: float = 0.0,
) -> Dict[str, FactorTrend]:
    """
    Trend of every L_sif history: least-squares slope of window means
    against iteration, and the fraction of window-to-window increases.

    Args:
        history: Loss history of a run.
        factors: Factors to report; defaults to every L_sif column.
        windows: Number of windows the history is cut into.
        skip_fraction: Leading fraction of iterations to ignore.

    Raises:
        DataError: If fewer than two windows remain.
    """
    if factors is None:
        factors = [c.split(".", 1)[1] for c in history.columns if c.startswith("L_sif.")]
    report = {}
    for k in factors:
        series = history.series(f"L_sif.{k}")
        start = int(np.floor(skip_fraction * len(series)))
        series = series[start:]
        n_windows = min(windows, len(series))
        if n_windows < 2:
            raise DataError(f"L_sif.{k} history is too short for a trend ({len(series)} points)")
        iterations = np.arange(start + 1, start + len(series) + 1, dtype=np.float64)
        chunks = np.array_split(series, n_windows)
        centers = np.array([c.mean() for c in np.array_split(iterations, n_windows)])
        means = np.array([c.mean() for c in chunks])
        slope = float(stats.linregress(centers, means).slope)
        monotonicity = float(np.mean(np.diff(means) > 0))
        report[k] = FactorTrend(slope, monotonicity, [float(m) for m in means])
    return report
