"""
File storage for datasets, checkpoints, scores and reports.
"""

import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd

from dasnlab.config import TrainConfig
from dasnlab.errors.exceptions import DataError, FormatError, StorageError
from dasnlab.services.metrics import ScoreSet
from dasnlab.services.model import DasnConfig, DasnModel
from dasnlab.services.nn import AdamState, decode_arrays, encode_arrays
from dasnlab.services.rng import Xoshiro256StarStar
from dasnlab.services.synthdata import BenchmarkSuite, FactorDataset, Sample
from dasnlab.services.trainer import LossHistory, TrainState, history_columns

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SAMPLE_COLUMNS = ["domain", "y", "f_identity", "f_environment", "f_sensor"]


def to_json_text(document: Any) -> str:
    """Sorted, indented JSON with a trailing newline."""
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def write_text(path: PathLike, text: str) -> Path:
    """
    Write UTF-8 text with LF line endings, creating parent directories.

    Raises:
        StorageError: If the file cannot be written.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise StorageError(f"Could not write {path}: {exc}") from exc
    logger.info(f"wrote {path}")
    return path


def write_bytes(path: PathLike, data: bytes) -> Path:
    """Binary counterpart of `write_text`."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise StorageError(f"Could not write {path}: {exc}") from exc
    logger.info(f"wrote {path}")
    return path


def read_bytes(path: PathLike) -> bytes:
    """Raw file contents; OSError becomes StorageError."""
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"Could not read {path}: {exc}") from exc


def write_json(path: PathLike, document: Any) -> Path:
    return write_text(path, to_json_text(document))


def read_json(path: PathLike) -> Any:
    """
    Raises:
        StorageError: If the file cannot be read.
        FormatError: If it is not valid JSON.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"Could not read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


def frame_to_csv(frame: pd.DataFrame, header: bool = True) -> str:
    """CSV text without the index, LF line endings."""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, header=header, lineterminator="\n")
    return buffer.getvalue()


def write_frame(path: PathLike, frame: pd.DataFrame) -> Path:
    return write_text(path, frame_to_csv(frame))


def read_frame(path: PathLike, **kwargs) -> pd.DataFrame:
    """Read a CSV written by `write_frame`, floats parsed round-trip exact."""
    try:
        return pd.read_csv(path, float_precision="round_trip", **kwargs)
    except OSError as exc:
        raise StorageError(f"Could not read {path}: {exc}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as exc:
        raise DataError(f"Could not parse {path}: {exc}") from exc


class DatasetStore:
    """
    The synthetic suite on disk: one CSV per domain plus `manifest.json`.

    Each domain file starts with a metadata line
    `input_dim,N_id,N_env,N_sens,domain` followed by rows
    `domain,y,f_id,f_env,f_sens,x_0..x_{D-1}` without a column header.
    """

    MANIFEST = "manifest.json"

    def __init__(self, root: PathLike):
        self.root = Path(root)

    def domain_path(self, name: str) -> Path:
        return self.root / f"{name}.csv"

    def write_suite(self, suite: BenchmarkSuite) -> List[Path]:
        """Write every domain file and the manifest; returns the written paths."""
        written = []
        for name, dataset in suite.datasets.items():
            written.append(write_text(self.domain_path(name), self.render_dataset(dataset)))
        manifest = suite.factor_model.manifest() if suite.factor_model else {}
        manifest["files"] = {name: self.domain_path(name).name for name in suite.datasets}
        written.append(write_json(self.root / self.MANIFEST, manifest))
        return written

    def render_dataset(self, dataset: FactorDataset) -> str:
        """
        Render a single-domain dataset in the domain file format.

        Raises:
            DataError: If the dataset spans more than one domain.
        """
        if len(dataset.domains) != 1:
            raise DataError("A domain file holds exactly one domain")
        (name,) = dataset.domains
        counts = dataset.domain_counts[name]
        meta = f"{dataset.input_dim},{counts['identity']},{counts['environment']},{counts['sensor']},{name}\n"
        rows = {
            "domain": [s.domain for s in dataset.samples],
            "y": dataset.y,
            "f_identity": [s.f_identity for s in dataset.samples],
            "f_environment": [s.f_environment for s in dataset.samples],
            "f_sensor": [s.f_sensor for s in dataset.samples],
        }
        frame = pd.DataFrame(rows)
        features = pd.DataFrame(
            dataset.x, columns=[f"x_{i}" for i in range(dataset.input_dim)]
        )
        frame = pd.concat([frame, features], axis=1)
        return meta + frame_to_csv(frame, header=False)

    def read_dataset(self, path: PathLike) -> FactorDataset:
        """
        Parse one domain file.

        Raises:
            StorageError: If the file cannot be read.
            DataError: If the metadata line or a row is malformed.
        """
        path = Path(path)
        try:
            with path.open(encoding="utf-8") as handle:
                meta = handle.readline().strip().split(",")
        except OSError as exc:
            raise StorageError(f"Could not read {path}: {exc}") from exc
        if len(meta) != 5:
            raise DataError(f"{path}: metadata line must hold input_dim,N_id,N_env,N_sens,domain")
        try:
            input_dim, n_id, n_env, n_sens = (int(v) for v in meta[:4])
        except ValueError:
            raise DataError(f"{path}: metadata counts must be integers") from None
        name = meta[4]

        frame = read_frame(path, skiprows=1, header=None, dtype={0: str})
        if frame.shape[1] != len(SAMPLE_COLUMNS) + input_dim:
            raise DataError(
                f"{path}: rows have {frame.shape[1]} columns, expected {len(SAMPLE_COLUMNS) + input_dim}"
            )
        if (frame[0] != name).any():
            raise DataError(f"{path}: rows from a domain other than {name}")
        labels = frame.iloc[:, 1:5].to_numpy(dtype=np.int64)
        if not np.isin(labels[:, 0], (0, 1)).all():
            raise DataError(f"{path}: spoof labels must be 0 or 1")
        x = frame.iloc[:, 5:].to_numpy(dtype=np.float64)
        for column, limit in zip(range(1, 4), (n_id, n_env, n_sens)):
            if labels[:, column].min(initial=0) < 0 or labels[:, column].max(initial=0) >= limit:
                raise DataError(f"{path}: {SAMPLE_COLUMNS[column + 1]} outside 0..{limit - 1}")
        samples = [
            Sample(x=x[i], y=int(row[0]), f_identity=int(row[1]), f_environment=int(row[2]),
                   f_sensor=int(row[3]), domain=name)
            for i, row in enumerate(labels)
        ]
        counts = {"identity": n_id, "environment": n_env, "sensor": n_sens}
        return FactorDataset(samples, {name: counts})

    def read_suite(self) -> BenchmarkSuite:
        """Load the suite named by `manifest.json`."""
        manifest = read_json(self.root / self.MANIFEST)
        files = manifest.get("files") if isinstance(manifest, dict) else None
        if not isinstance(files, dict) or not files:
            raise FormatError(f"{self.root / self.MANIFEST} lists no domain files")
        datasets = {name: self.read_dataset(self.root / file) for name, file in files.items()}
        return BenchmarkSuite(datasets)


def write_scores(path: PathLike, scores: ScoreSet) -> Path:
    """Write a `score,label` CSV, one row per sample."""
    frame = pd.DataFrame({"score": scores.scores, "label": scores.labels})
    return write_frame(path, frame)


def read_scores(path: PathLike) -> ScoreSet:
    """Load a score file written by `write_scores`."""
    frame = read_frame(path)
    if list(frame.columns) != ["score", "label"]:
        raise DataError(f"{path}: expected columns score,label")
    return ScoreSet(frame["score"].to_numpy(), frame["label"].to_numpy())


def feature_frame(features: np.ndarray, dataset: FactorDataset) -> pd.DataFrame:
    """Encoder features with their labels; SiF columns hold union-space labels."""
    frame = pd.DataFrame({
        "domain": [s.domain for s in dataset.samples],
        "y": dataset.y,
        "f_identity": dataset.factor_labels("identity"),
        "f_environment": dataset.factor_labels("environment"),
        "f_sensor": dataset.factor_labels("sensor"),
    })
    columns = [f"e_{i}" for i in range(features.shape[1])]
    return pd.concat([frame, pd.DataFrame(features, columns=columns)], axis=1)


class RunStore:
    """
    A training run directory.

    The checkpoint is the triple model.dasn / optimizer.dasn /
    trainer_state.json plus architecture.json; together they restore a
    `TrainState` bit for bit.
    """

    MODEL = "model.dasn"
    OPTIMIZER = "optimizer.dasn"
    STATE = "trainer_state.json"
    ARCHITECTURE = "architecture.json"
    HISTORY = "history.csv"

    def __init__(self, root: PathLike):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def has_checkpoint(self) -> bool:
        return all(self.path(n).exists() for n in (self.MODEL, self.STATE, self.ARCHITECTURE))

    def save_checkpoint(self, state: TrainState, config: TrainConfig) -> None:
        """Persist model, optimizer, trainer state, architecture and loss history."""
        architecture = state.model.config.to_dict()
        architecture["mode"] = config.mode
        architecture["include_secondary"] = config.include_secondary
        write_json(self.path(self.ARCHITECTURE), architecture)
        write_bytes(self.path(self.MODEL), state.model.snapshot())

        moments: Dict[str, np.ndarray] = {}
        for label, adam in (("step1", state.adam_step1), ("step2", state.adam_step2)):
            for name in sorted(adam.m):
                moments[f"{label}.m/{name}"] = adam.m[name]
                moments[f"{label}.v/{name}"] = adam.v[name]
        write_bytes(self.path(self.OPTIMIZER), encode_arrays(moments))

        write_json(self.path(self.STATE), {
            "epoch": state.epoch,
            "iteration": state.iteration,
            "rng_state": state.rng.state,
            "adam": {
                label: {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t}
                for label, a in (("step1", state.adam_step1), ("step2", state.adam_step2))
            },
            "history": {"columns": state.history.columns, "values": state.history.to_dict()},
        })
        write_frame(self.path(self.HISTORY), state.history.to_frame())

    def load_architecture(self) -> Dict[str, Any]:
        """The saved model configuration as a plain document."""
        document = read_json(self.path(self.ARCHITECTURE))
        try:
            DasnConfig.from_dict(document)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{self.path(self.ARCHITECTURE)} is malformed: {exc}") from exc
        return document

    def load_model(self) -> DasnModel:
        """
        Architecture plus parameters, without optimizer state.

        Raises:
            FormatError: If the parameter image does not match the architecture.
        """
        model = DasnModel.zeros(DasnConfig.from_dict(self.load_architecture()))
        model.restore(read_bytes(self.path(self.MODEL)), strict=True)
        return model

    def load_checkpoint(self) -> TrainState:
        model = self.load_model()
        document = read_json(self.path(self.STATE))
        moments = decode_arrays(read_bytes(self.path(self.OPTIMIZER)))
        try:
            adams = {}
            for label in ("step1", "step2"):
                entry = document["adam"][label]
                adam = AdamState(
                    lr=float(entry["lr"]),
                    beta1=float(entry["beta1"]),
                    beta2=float(entry["beta2"]),
                    eps=float(entry["eps"]),
                    t=int(entry["t"]),
                )
                for key, value in moments.items():
                    prefix, name = key.split("/", 1)
                    if prefix == f"{label}.m":
                        adam.m[name] = value
                    elif prefix == f"{label}.v":
                        adam.v[name] = value
                adams[label] = adam
            architecture = self.load_architecture()
            columns = document["history"]["columns"]
            expected = history_columns(model.factors, bool(architecture.get("include_secondary")))
            if list(columns) != expected:
                raise FormatError(f"History columns {columns} do not match the architecture")
            history = LossHistory.from_dict(columns, document["history"]["values"])
            rng = Xoshiro256StarStar.from_state(document["rng_state"])
            return TrainState(
                model=model,
                adam_step1=adams["step1"],
                adam_step2=adams["step2"],
                history=history,
                rng=rng,
                epoch=int(document["epoch"]),
                iteration=int(document["iteration"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{self.path(self.STATE)} is malformed: {exc}") from exc
