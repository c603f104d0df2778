"""
Command handlers of the dasn-lab command line.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import pandas as pd

from dasnlab.config import RunConfig, load_run_config
from dasnlab.errors.exceptions import ConfigurationError, DataError, DimensionError
from dasnlab.services.metrics import EvalReport, ScoreSet, evaluate
from dasnlab.services.model import DasnModel, infer
from dasnlab.services.probe import extract_features, probe_model, suppression_report
from dasnlab.services.storage import (
    DatasetStore,
    RunStore,
    feature_frame,
    frame_to_csv,
    write_frame,
    write_json,
    write_scores,
    write_text,
)
from dasnlab.services.synthdata import (
    FactorDataset,
    cross_domain_split,
    gen_benchmark_suite,
    parse_task,
)
from dasnlab.services.trainer import (
    DasnTrainer,
    TrainState,
    divergence_report,
    init_state,
    model_config_for,
)

logger = logging.getLogger(__name__)

DIVERGENCE_SKIP_FRACTION = 0.2


def config_options(command):
    """--config and --set, shared by every command."""
    command = click.option(
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override a configuration leaf by dotted path, e.g. train.lr=1e-4.",
    )(command)
    command = click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        default=None,
        help="Run configuration JSON.",
    )(command)
    return command


def load_config(config_path: Optional[str], overrides: Sequence[str]) -> RunConfig:
    """Resolve the run configuration; without --config the environment default is used if present."""
    if config_path is None:
        ctx = click.get_current_context()
        config_class = (ctx.obj or {}).get("config_class")
        default = getattr(config_class, "DEFAULT_CONFIG_PATH", None)
        if default and Path(default).is_file():
            config_path = default
    if config_path is not None:
        logger.debug(f"loading configuration from {config_path}")
    return load_run_config(config_path, overrides)


def task_split(config: RunConfig, task: Optional[str] = None) -> Tuple[FactorDataset, FactorDataset]:
    """(train set, held-out set) of the task on the stored suite."""
    suite = DatasetStore(config.paths.data_dir).read_suite()
    sources, target = parse_task(task or config.task)
    return cross_domain_split(suite, sources, target)


def score_dataset(model: DasnModel, dataset: FactorDataset) -> ScoreSet:
    """Genuine-class scores of every sample, paired with its spoof label."""
    if dataset.input_dim != model.config.input_dim:
        raise DimensionError(
            f"Checkpoint expects input_dim {model.config.input_dim}, dataset has {dataset.input_dim}"
        )
    return ScoreSet(infer(model, dataset.x), dataset.y)


def method_label(architecture: Dict[str, Any]) -> Tuple[str, str]:
    """(Method, SiFs) cells of an ablation row."""
    mode = architecture.get("mode", "DASN")
    factors = architecture.get("factors", [])
    if mode == "ASN_d":
        return mode, "domain"
    return mode, "+".join(factors) if factors else "-"


def require_checkpoint(run: RunStore) -> None:
    if not run.has_checkpoint():
        raise ConfigurationError(f"No checkpoint found in {run.root}")


@click.command("gen-data")
@config_options
def gen_data(config_path, overrides):
    """Generate the four-domain synthetic suite."""
    config = load_config(config_path, overrides)
    suite = gen_benchmark_suite(
        config.seed,
        input_dim=config.data.input_dim,
        coefficients=config.data.coefficients(),
        samples_per_identity=config.data.samples_per_identity,
    )
    store = DatasetStore(config.paths.data_dir)
    store.write_suite(suite)
    write_text(store.root / "resolved_config.gen-data.json", config.to_json())
    for name, dataset in suite.datasets.items():
        logger.info(f"domain {name}: {len(dataset)} samples, counts {dataset.domain_counts[name]}")


@click.command("train")
@config_options
@click.option("--resume", is_flag=True, help="Continue from the checkpoint in the output directory.")
def train(config_path, overrides, resume):
    """Train a model on the task's source domains."""
    config = load_config(config_path, overrides)
    train_set, test_set = task_split(config)
    run = RunStore(config.paths.out_dir)
    trainer = DasnTrainer(config.train, config.task)

    if resume:
        require_checkpoint(run)
        mode = run.load_architecture().get("mode")
        if mode != config.train.mode:
            raise ConfigurationError(f"Checkpoint was trained with mode {mode}, config has {config.train.mode}")
        state = run.load_checkpoint()
        state.adam_step1.lr = state.adam_step2.lr = config.train.lr
        logger.info(f"resuming from epoch {state.epoch} (iteration {state.iteration})")
    else:
        model_config = model_config_for(
            config.train, train_set, config.model.feature_dim, config.model.hidden_dim
        )
        state = init_state(config.train, model_config)

    eval_every = config.train.eval_every
    checkpoint_every = config.train.checkpoint_every

    def on_epoch_end(current: TrainState) -> None:
        if eval_every and current.epoch % eval_every == 0:
            report = evaluate(score_dataset(current.model, test_set))
            logger.info(
                f"epoch {current.epoch}: held-out AUC {report.auc:.4f} HTER {report.hter:.4f}"
            )
        if checkpoint_every and current.epoch % checkpoint_every == 0:
            run.save_checkpoint(current, config.train)

    logger.info(
        f"training {config.train.mode} on {config.task}: {len(train_set)} samples, "
        f"batch size {trainer.batch_size}, factors {list(config.train.factors)}"
    )
    state = trainer.train(train_set, state, on_epoch_end)
    run.save_checkpoint(state, config.train)
    write_json(run.path("divergence.json"), _divergence_document(state))
    write_text(run.path("resolved_config.train.json"), config.to_json())


def _divergence_document(state: TrainState) -> Dict[str, Any]:
    factors = list(state.model.factors)
    document: Dict[str, Any] = {"skip_fraction": DIVERGENCE_SKIP_FRACTION, "factors": {}}
    if not factors:
        return document
    try:
        trends = divergence_report(state.history, factors, skip_fraction=DIVERGENCE_SKIP_FRACTION)
    except DataError as exc:
        logger.warning(f"No divergence report: {exc.message}")
        return document
    document["factors"] = {
        k: {"slope": t.slope, "monotonicity": t.monotonicity, "window_means": t.window_means}
        for k, t in trends.items()
    }
    return document


@click.command("eval")
@config_options
@click.option("--checkpoint", type=click.Path(file_okay=False), default=None,
              help="Run directory to evaluate; defaults to paths.out_dir.")
@click.option("--split", type=click.Choice(["test", "train"]), default="test", show_default=True)
@click.option("--prune-heads", is_flag=True, help="Score with every head and S removed.")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None,
              help="Where reports go; defaults to the checkpoint directory.")
def evaluate_command(config_path, overrides, checkpoint, split, prune_heads, output_dir):
    """Score the held-out domain and report AUC and HTER."""
    config = load_config(config_path, overrides)
    run = RunStore(checkpoint or config.paths.out_dir)
    require_checkpoint(run)
    model = run.load_model()
    if prune_heads:
        model = model.prune_heads()
    train_set, test_set = task_split(config)
    dataset = test_set if split == "test" else train_set

    scores = score_dataset(model, dataset)
    report = evaluate(scores)
    out = Path(output_dir) if output_dir else run.root
    write_scores(out / "scores.csv", scores)
    document = report.to_dict()
    document.update({"task": config.task, "split": split, "samples": len(dataset),
                     "pruned": model.is_pruned})
    write_json(out / "report.json", document)
    row = {"task": config.task, "split": split, **report.to_row()}
    write_frame(out / "report.csv", pd.DataFrame([row]))
    write_text(out / "resolved_config.eval.json", config.to_json())
    logger.info(f"{config.task} {split}: AUC {report.auc:.4f} HTER {report.hter:.4f}")


@click.command("probe")
@config_options
@click.option("--checkpoint", type=click.Path(file_okay=False), default=None,
              help="Run directory of the probed encoder; defaults to paths.out_dir.")
@click.option("--baseline", "baseline_dir", type=click.Path(file_okay=False), default=None,
              help="Run directory of a reference encoder; overrides probe.baseline_dir.")
def probe(config_path, overrides, checkpoint, baseline_dir):
    """Linear probes for spoof and SiF predictability on frozen encoder features."""
    config = load_config(config_path, overrides)
    settings = config.probe
    run = RunStore(checkpoint or config.paths.out_dir)
    require_checkpoint(run)
    model = run.load_model()
    train_set, test_set = task_split(config)
    dataset = train_set if settings.split == "train" else test_set
    kwargs = dict(factors=settings.factors, seed=config.seed, epochs=settings.epochs,
                  lr=settings.lr, hidden_dim=settings.hidden_dim)

    baseline_dir = baseline_dir or settings.baseline_dir
    if baseline_dir:
        reference = RunStore(baseline_dir)
        require_checkpoint(reference)
        baseline_model = reference.load_model()
        report = suppression_report(baseline_model, model, dataset,
                                    labels=("baseline", "target"), **kwargs)
        models = {"baseline": baseline_model, "target": model}
        for k, delta in report.deltas.items():
            logger.info(f"{k}: baseline - target probe accuracy = {delta:+.4f}")
    else:
        label = method_label(run.load_architecture())[0]
        report = probe_model(model, dataset, label, **kwargs)
        models = {label: model}

    write_json(run.path("probe_report.json"), report.to_dict())
    write_frame(run.path("probe_report.csv"), pd.DataFrame(report.rows()))
    if settings.export_features:
        for label, m in models.items():
            features, _ = extract_features(m, dataset)
            write_frame(run.path(f"features_{label}.csv"), feature_frame(features, dataset))
    write_text(run.path("resolved_config.probe.json"), config.to_json())


def _ablation_row(config: RunConfig, run_dir: str) -> Dict[str, Any]:
    run = RunStore(run_dir)
    architecture = run.load_architecture()
    resolved = run.path("resolved_config.train.json")
    task = load_run_config(str(resolved)).task if resolved.is_file() else config.task
    _, test_set = task_split(config, task)
    report: EvalReport = evaluate(score_dataset(run.load_model(), test_set))
    method, sifs = method_label(architecture)
    return {
        "Method": method,
        "SiFs": sifs,
        "Task": task,
        "HTER(%)": f"{100.0 * report.hter:.2f}",
        "AUC(%)": f"{100.0 * report.auc:.2f}",
    }


def ablation_markdown(rows: List[Dict[str, Any]]) -> str:
    """Render ablation rows as a Markdown table."""
    columns = ["Method", "SiFs", "Task", "HTER(%)", "AUC(%)"]
    lines = [
        "| " + " | ".join(columns) + " |",
        "|" + "|".join(["---"] * len(columns)) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(str(row[c]) for c in columns) + " |")
    return "\n".join(lines) + "\n"


@click.command("report")
@config_options
@click.argument("runs", nargs=-1, type=click.Path(file_okay=False))
@click.option("--output-dir", type=click.Path(file_okay=False), default=None,
              help="Where the ablation table goes; defaults to paths.out_dir.")
def report(config_path, overrides, runs, output_dir):
    """Ablation table over trained runs, one row per run."""
    config = load_config(config_path, overrides)
    runs = list(runs) or list(config.report.runs)
    if not runs:
        raise ConfigurationError("No runs given; pass run directories or set report.runs")
    for run_dir in runs:
        require_checkpoint(RunStore(run_dir))

    with ThreadPoolExecutor(max_workers=config.report.workers) as pool:
        rows = list(pool.map(lambda r: _ablation_row(config, r), runs))

    out = Path(output_dir or config.paths.out_dir)
    write_text(out / "ablation.md", ablation_markdown(rows))
    write_text(out / "ablation.csv", frame_to_csv(pd.DataFrame(rows)))
    write_text(out / "resolved_config.report.json", config.to_json())
