#!/usr/bin/env python3
"""
Trend experiments for ufcl-core.

Reproduces, at desk scale, the qualitative results the method is known for:
HDBSCAN versus a single DBSCAN ε on variable-density data, learning curves on
the synthetic benchmark, weight-scheme and iterations-per-epoch comparisons,
min-cluster-size and pooling sweeps, and byte-identical replays.

Quick Start:
    python scripts/run_experiments.py                       # everything
    python scripts/run_experiments.py --only variable_density
    python scripts/run_experiments.py --only iterations -j 4 --seeds 0,1

Each experiment prints a table and all results are saved to
<out-dir>/experiments.json.
"""

import json
import logging
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import click
import numpy as np
import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

# Add ufcl-core to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config import PipelineConfig  # noqa: E402
from core.clustering import dbscan, hdbscan, sweep_min_cluster_size  # noqa: E402
from core.evaluation import clustering_acc  # noqa: E402
from core.membank import WeightKind, WeightSign  # noqa: E402
from core.neighbors import clustering_distances, pairwise_euclidean  # noqa: E402
from core.pipeline import Trainer, TrainingData, run_pipeline  # noqa: E402
from core.synth import synth_dataset, synth_feature_maps, variable_density_blobs  # noqa: E402
from models.encoder import Pooling  # noqa: E402
from storage.run_store import RunStore  # noqa: E402

# =============================================================================
# Configuration
# =============================================================================

EXPERIMENTS_FILE = Path(__file__).parent / "experiments.yaml"
RESULTS_FILENAME = "experiments.json"

console = Console()
logger = logging.getLogger("ufcl.experiments")


def load_experiments(path: Path = EXPERIMENTS_FILE) -> dict:
    """Load experiment definitions from YAML."""
    if not path.exists():
        raise click.ClickException(f"{path} not found")
    with open(path) as f:
        return yaml.safe_load(f)


# =============================================================================
# Data Classes
# =============================================================================


@dataclass
class ExperimentResult:
    """Outcome of one experiment."""

    name: str
    passed: Optional[bool] = None  # None for report-only experiments
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    duration: float = 0.0


# =============================================================================
# Runner
# =============================================================================


class ExperimentRunner:
    """Runs the experiments defined in experiments.yaml."""

    def __init__(self, spec: dict, seeds: list[int], jobs: int = 1):
        self.spec = spec
        self.seeds = seeds
        self.jobs = jobs
        self.benchmark = spec.get("benchmark", {})

    def _dataset(self, seed: int, noise_frac: float = 0.0):
        bench = self.benchmark
        return synth_dataset(
            bench.get("classes", 20),
            bench.get("per_class", 50),
            bench.get("input_dim", 64),
            separation=np.radians(bench.get("separation_degrees", 60.0)),
            spread=bench.get("spread", 0.075),
            noise_frac=noise_frac,
            seed=seed,
            test_per_class=bench.get("test_per_class", 10),
        )

    def _per_seed(self, func: Callable[[int], dict]) -> list[dict]:
        if self.jobs <= 1:
            return [func(seed) for seed in self.seeds]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(func, self.seeds))

    def _final(self, config: PipelineConfig, data: TrainingData):
        reports = run_pipeline(config, data)
        return reports[-1] if reports else None

    # -------------------------------------------------------------------------

    def run_variable_density(self, opts: dict) -> ExperimentResult:
        points, labels = variable_density_blobs()
        D = pairwise_euclidean(points)
        steps = opts.get("eps_steps", 50)
        best_eps, best_acc = None, -1.0
        for k in range(1, steps + 1):
            eps = k / steps
            acc = clustering_acc(dbscan(D, eps, opts.get("min_pts", 4)), labels)
            if acc > best_acc:
                best_eps, best_acc = eps, acc
        assignment = hdbscan(D, opts.get("min_cluster_size", 5))
        hdb_acc = clustering_acc(assignment, labels)
        return ExperimentResult(
            name="variable_density",
            passed=best_acc < 1.0 and hdb_acc == 1.0,
            rows=[
                {"method": f"dbscan (best eps={best_eps:.2f})", "acc": best_acc},
                {
                    "method": "hdbscan",
                    "acc": hdb_acc,
                    "clusters": assignment.num_clusters,
                    "outliers": assignment.num_outliers,
                },
            ],
        )

    def run_end_to_end(self, opts: dict) -> ExperimentResult:
        config = PipelineConfig(epochs=opts.get("epochs", 20))

        def one(seed: int) -> dict:
            data = TrainingData.from_synth(self._dataset(seed))
            final = self._final(replace(config, seed=seed), data)
            ok = final.acc >= opts.get("min_acc", 0.9) and final.top1 >= opts.get("min_top1", 0.95)
            return {"seed": seed, "acc": final.acc, "top1": final.top1, "ok": ok}

        rows = self._per_seed(one)
        passing = sum(1 for row in rows if row["ok"])
        required = min(opts.get("required_seeds", 4), len(rows))
        return ExperimentResult(name="end_to_end", passed=passing >= required, rows=rows)

    def run_weight_schemes(self, opts: dict) -> ExperimentResult:
        rows = []
        medians = {}
        for kind in opts.get("schemes", ["zero", "min", "mean"]):
            for sign in opts.get("signs", ["as_written"]):
                config = PipelineConfig(
                    epochs=opts.get("epochs", 10),
                    weight_scheme=WeightKind(kind),
                    weight_sign=WeightSign(sign),
                )

                def one(seed: int, config=config) -> float:
                    data = TrainingData.from_synth(self._dataset(seed, opts.get("noise_frac", 0.1)))
                    return self._final(replace(config, seed=seed), data).acc

                accs = self._per_seed(one)
                medians[(kind, sign)] = float(np.median(accs))
                rows.append({"scheme": kind, "sign": sign, "median_acc": medians[(kind, sign)]})
        passed = None
        if ("mean", "as_written") in medians and ("zero", "as_written") in medians:
            passed = medians[("mean", "as_written")] >= medians[("zero", "as_written")]
        return ExperimentResult(name="weight_schemes", passed=passed, rows=rows)

    def run_iterations(self, opts: dict) -> ExperimentResult:
        values = opts.get("values", [25, 50, 100, 200])

        def one(seed: int) -> dict:
            data = TrainingData.from_synth(self._dataset(seed))
            accs = []
            for iterations in values:
                config = PipelineConfig(
                    epochs=opts.get("epochs", 10), iterations_per_epoch=iterations, seed=seed
                )
                accs.append(self._final(config, data).acc)
            best = int(np.argmax(accs))
            return {"seed": seed, **dict(zip(map(str, values), accs)), "interior": 0 < best < len(values) - 1}

        rows = self._per_seed(one)
        interior = sum(1 for row in rows if row["interior"])
        return ExperimentResult(
            name="iterations",
            passed=interior >= min(3, len(rows)),
            rows=rows,
            notes=[f"interior maximizer for {interior}/{len(rows)} seeds"],
        )

    def run_min_cluster_size(self, opts: dict) -> ExperimentResult:
        seed = self.seeds[0]
        data = TrainingData.from_synth(self._dataset(seed))
        trainer = Trainer(PipelineConfig(seed=seed), data)
        features = trainer.encode(data.inputs)
        D = clustering_distances(features, trainer.config.distance_kind, trainer.config.jaccard_k)
        counts = sweep_min_cluster_size(D, opts.get("sizes", [5]))
        rows = [{"min_cluster_size": size, "clusters": count} for size, count in counts.items()]
        ordered = [counts[size] for size in sorted(counts)]
        monotone = all(a >= b for a, b in zip(ordered, ordered[1:]))
        return ExperimentResult(name="min_cluster_size", passed=monotone, rows=rows)

    def run_pooling(self, opts: dict) -> ExperimentResult:
        width, height, channels = opts.get("width", 4), opts.get("height", 4), opts.get("channels", 16)
        rows = []
        for variant in opts.get("variants", ["gem"]):
            config = PipelineConfig(
                epochs=opts.get("epochs", 10),
                pooling=Pooling(variant),
                tensor_width=width,
                tensor_height=height,
            )

            def one(seed: int, config=config) -> dict:
                synth = synth_feature_maps(
                    self.benchmark.get("classes", 20),
                    self.benchmark.get("per_class", 50),
                    width,
                    height,
                    channels,
                    seed=seed,
                    test_per_class=self.benchmark.get("test_per_class", 10),
                )
                final = self._final(replace(config, seed=seed), TrainingData.from_synth(synth))
                return {"acc": final.acc, "top1": final.top1}

            results = self._per_seed(one)
            rows.append(
                {
                    "pooling": variant,
                    "median_acc": float(np.median([r["acc"] for r in results])),
                    "median_top1": float(np.median([r["top1"] for r in results])),
                }
            )
        return ExperimentResult(name="pooling", rows=rows)

    def run_determinism(self, opts: dict) -> ExperimentResult:
        seed = self.seeds[0]
        data = TrainingData.from_synth(self._dataset(seed))
        payloads = []
        with tempfile.TemporaryDirectory() as tmp:
            for run, workers in enumerate(opts.get("workers", [1, 4])):
                config = PipelineConfig(epochs=opts.get("epochs", 3), seed=seed, workers=workers)
                with RunStore(Path(tmp) / f"run{run}") as store:
                    run_pipeline(config, data, store=store)
                payloads.append(store.reports_path.read_bytes())
        identical = all(p == payloads[0] for p in payloads)
        return ExperimentResult(
            name="determinism",
            passed=identical,
            rows=[{"workers": w, "bytes": len(p)} for w, p in zip(opts.get("workers", [1, 4]), payloads)],
        )


# =============================================================================
# Output
# =============================================================================


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def print_result(result: ExperimentResult) -> None:
    status = {True: "[green]PASS[/green]", False: "[red]FAIL[/red]", None: "[dim]report[/dim]"}
    table = Table(title=f"{result.name} {status[result.passed]} ({result.duration:.1f}s)")
    columns = list(dict.fromkeys(key for row in result.rows for key in row))
    for column in columns:
        table.add_column(column, justify="right")
    for row in result.rows:
        table.add_row(*(_fmt(row.get(column, "")) for column in columns))
    console.print(table)
    for note in result.notes:
        console.print(f"  {note}")


@click.command()
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("runs/experiments"))
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=EXPERIMENTS_FILE)
@click.option("--only", multiple=True, help="Run only the named experiment(s)")
@click.option("--seeds", default=None, help="Comma-separated seeds (overrides the YAML)")
@click.option("-j", "--jobs", type=int, default=1, help="Seeds run in parallel")
@click.option("--verbose", "-v", is_flag=True)
def main(out_dir, config_path, only, seeds, jobs, verbose):
    """Run the trend experiments and save experiments.json."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
    )
    spec = load_experiments(config_path)
    seed_list = [int(s) for s in seeds.split(",")] if seeds else spec.get("seeds", [0])
    runner = ExperimentRunner(spec, seed_list, jobs=jobs)

    results = []
    for name, opts in spec.get("experiments", {}).items():
        opts = opts or {}
        if only and name not in only:
            continue
        if not only and not opts.get("enabled", True):
            continue
        start = time.time()
        result = getattr(runner, f"run_{name}")(opts)
        result.duration = time.time() - start
        print_result(result)
        results.append(result)

    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESULTS_FILENAME
    path.write_text(json.dumps([asdict(r) for r in results], indent=2), encoding="utf-8")
    console.print(f"Results saved to {path}")
    failed = [r.name for r in results if r.passed is False]
    if failed:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
