"""
ufcl command-line interface.

    ufcl [--seed N] [--out-dir DIR] [--config FILE] [--set key=value ...] COMMAND

Commands:
    synth     write a synthetic benchmark (train/test matrices + labels)
    cluster   pseudo-label an embedding matrix
    train     run the clustering-learning loop on a matrix (supports --resume)
    eval      evaluate the checkpoint in --out-dir on a matrix
    pipeline  synth + train in one go

All outputs go under --out-dir.
"""

import functools
import logging
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from config import config_lines, load_configs
from core.dto.report import REPORT_FIELDS, EpochReport
from core.errors import UFCLError
from core.evaluation import ari, clustering_acc, nmi
from core.pipeline import Trainer, TrainingData, pseudo_labels, run_pipeline
from core.synth import SynthData, synth_dataset, synth_feature_maps
from storage.matrix_store import load_embeddings, load_labels, save_embeddings, save_labels
from storage.run_store import RunStore

console = Console()
logger = logging.getLogger("ufcl")

TRAIN_FILE = "train.bin"
TRAIN_LABELS_FILE = "train_labels.txt"
TEST_FILE = "test.bin"
TEST_LABELS_FILE = "test_labels.txt"


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def handles_errors(func):
    """Turn library errors into clean click failures."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except UFCLError as e:
            raise click.ClickException(str(e)) from e

    return wrapper


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def print_reports(reports: list[EpochReport], title: str = "Epoch reports") -> None:
    table = Table(title=title)
    for name in REPORT_FIELDS:
        table.add_column(name, justify="right")
    for report in reports:
        row = report.to_dict()
        table.add_row(*(_fmt(row[name]) for name in REPORT_FIELDS))
    console.print(table)


def _make_synth(ctx: click.Context) -> SynthData:
    pipeline, synth = ctx.obj["pipeline"], ctx.obj["synth"]
    if synth.feature_maps:
        return synth_feature_maps(
            synth.classes,
            synth.per_class,
            synth.map_width,
            synth.map_height,
            synth.input_dim,
            separation=synth.separation,
            spread=synth.spread,
            noise_frac=synth.noise_frac,
            seed=pipeline.seed,
            test_per_class=synth.test_per_class,
        )
    return synth_dataset(
        synth.classes,
        synth.per_class,
        synth.input_dim,
        separation=synth.separation,
        spread=synth.spread,
        noise_frac=synth.noise_frac,
        seed=pipeline.seed,
        test_per_class=synth.test_per_class,
    )


def _write_synth(data: SynthData, out_dir: Path) -> None:
    save_embeddings(out_dir / TRAIN_FILE, data.train_inputs)
    save_labels(out_dir / TRAIN_LABELS_FILE, data.train_labels)
    if data.has_test_split:
        save_embeddings(out_dir / TEST_FILE, data.test_inputs)
        save_labels(out_dir / TEST_LABELS_FILE, data.test_labels)


def _load_data(
    inputs: Path,
    labels: Optional[Path],
    test: Optional[Path],
    test_labels: Optional[Path],
    fmt: Optional[str],
) -> TrainingData:
    X = load_embeddings(inputs, fmt)
    y = load_labels(labels, expected_length=X.shape[0]) if labels else None
    X_test = load_embeddings(test, fmt) if test else None
    y_test = None
    if test_labels:
        expected = X_test.shape[0] if X_test is not None else None
        y_test = load_labels(test_labels, expected_length=expected)
    return TrainingData(inputs=X, labels=y, test_inputs=X_test, test_labels=y_test)


def _train(ctx: click.Context, data: TrainingData, resume: bool) -> list[EpochReport]:
    config = ctx.obj["pipeline"]
    out_dir: Path = ctx.obj["out_dir"]
    with RunStore(out_dir, resume=resume) as store:
        store.write_config(config_lines(config, ctx.obj["synth"]))
        if resume and store.has_checkpoint():
            trainer = Trainer.from_checkpoint(config, data, store.load_checkpoint())
        else:
            if resume:
                logger.warning(f"No checkpoint in {out_dir}, starting from scratch")
            trainer = Trainer(config, data)
        return run_pipeline(config, data, store=store, trainer=trainer)


data_options = [
    click.option("--labels", type=click.Path(exists=True, path_type=Path), help="Truth labels"),
    click.option("--test", type=click.Path(exists=True, path_type=Path), help="Held-out matrix"),
    click.option(
        "--test-labels", type=click.Path(exists=True, path_type=Path), help="Held-out labels"
    ),
    click.option("--format", "fmt", type=click.Choice(["binary", "csv"]), default=None),
]


def with_data_options(func):
    for option in reversed(data_options):
        func = option(func)
    return func


@click.group()
@click.option("--seed", type=int, default=None, help="Overrides the configured seed")
@click.option(
    "--out-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("runs/latest"),
    show_default=True,
)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Config override")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
@handles_errors
def cli(ctx, seed, out_dir, config_path, overrides, verbose):
    """Unsupervised fine-grained clustering-learning loop."""
    _setup_logging(verbose)
    overrides = list(overrides)
    if seed is not None:
        overrides.append(f"seed={seed}")
    pipeline, synth = load_configs(config_path, overrides)
    ctx.obj = {"pipeline": pipeline, "synth": synth, "out_dir": out_dir}


@cli.command()
@click.pass_context
@handles_errors
def synth(ctx):
    """Write a synthetic benchmark into --out-dir."""
    data = _make_synth(ctx)
    _write_synth(data, ctx.obj["out_dir"])
    table = Table(title="Synthetic benchmark")
    table.add_column("split")
    table.add_column("rows", justify="right")
    table.add_column("dim", justify="right")
    table.add_row("train", str(data.train_inputs.shape[0]), str(data.input_dim))
    table.add_row("test", str(data.test_inputs.shape[0]), str(data.input_dim))
    console.print(table)


@cli.command()
@click.argument("inputs", type=click.Path(exists=True, path_type=Path))
@with_data_options
@click.pass_context
@handles_errors
def cluster(ctx, inputs, labels, test, test_labels, fmt):
    """Pseudo-label the rows of INPUTS (treated as embeddings)."""
    features = load_embeddings(inputs, fmt)
    assignment = pseudo_labels(features, ctx.obj["pipeline"])
    out_dir: Path = ctx.obj["out_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    save_labels(out_dir / "labels.txt", assignment.labels)

    table = Table(title="Clustering")
    table.add_column("metric")
    table.add_column("value", justify="right")
    table.add_row("clusters", str(assignment.num_clusters))
    table.add_row("outliers", str(assignment.num_outliers))
    if labels:
        truth = load_labels(labels, expected_length=len(assignment))
        table.add_row("acc", _fmt(clustering_acc(assignment, truth)))
        table.add_row("nmi", _fmt(nmi(assignment, truth)))
        table.add_row("ari", _fmt(ari(assignment, truth)))
    console.print(table)


@cli.command()
@click.argument("inputs", type=click.Path(exists=True, path_type=Path))
@with_data_options
@click.option("--resume", is_flag=True, help="Continue from the checkpoint in --out-dir")
@click.pass_context
@handles_errors
def train(ctx, inputs, labels, test, test_labels, fmt, resume):
    """Train the encoder on INPUTS."""
    data = _load_data(inputs, labels, test, test_labels, fmt)
    print_reports(_train(ctx, data, resume))


@cli.command(name="eval")
@click.argument("inputs", type=click.Path(exists=True, path_type=Path))
@with_data_options
@click.pass_context
@handles_errors
def evaluate(ctx, inputs, labels, test, test_labels, fmt):
    """Evaluate the checkpoint in --out-dir on INPUTS."""
    data = _load_data(inputs, labels, test, test_labels, fmt)
    store = RunStore(ctx.obj["out_dir"], resume=True)
    checkpoint = store.load_checkpoint()
    trainer = Trainer.from_checkpoint(ctx.obj["pipeline"], data, checkpoint)
    assignment = pseudo_labels(trainer.train_features(), ctx.obj["pipeline"])
    report = trainer.evaluate(checkpoint.epoch, assignment)
    print_reports([report], title="Evaluation")


@cli.command()
@click.option("--resume", is_flag=True, help="Continue from the checkpoint in --out-dir")
@click.pass_context
@handles_errors
def pipeline(ctx, resume):
    """Synthesize the benchmark and train on it."""
    synth_data = _make_synth(ctx)
    _write_synth(synth_data, ctx.obj["out_dir"])
    reports = _train(ctx, TrainingData.from_synth(synth_data), resume)
    print_reports(reports)
    final = reports[-1] if reports else None
    if final is not None and final.acc is not None:
        console.print(f"Final ACC {final.acc:.4f}, Top-1 {_fmt(final.top1)}")


if __name__ == "__main__":
    cli()
