"""Config-driven sweep execution and cross-cell comparison.

Every (strategy, alpha, rm_size, seed) cell writes into its own directory:

    stream.json     class sets and sample counts of every experience
    metrics.csv     experience,metric,value (rewritten after every experience)
    summary.json    final accuracies, config echo, seed, comparability key
    DONE | FAILED   completion marker; FAILED holds the traceback
"""

from __future__ import annotations

import json
import logging
import time
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed
from pydantic import ValidationError
from tqdm import tqdm

from ..config import settings
from ..exceptions import ComparabilityError, ConfigValidationError, DimensionError, InputError
from ..schemas import ExperimentConfig, StrategyTag, TrainConfig
from .checkpoint import load_network
from .metrics import MetricsLog, evaluate_after, train_cumulative
from .network import Network
from .strategy import ContinualLearner
from .streams import Stream, build_dataset, build_stream

logger = logging.getLogger(__name__)

CUMULATIVE = "cumulative"
COMPARISON_COLUMNS = [
    "strategy",
    "alpha",
    "rm_size",
    "n_seeds",
    "accuracy_fixed_mean",
    "accuracy_fixed_std",
    "accuracy_seen_mean",
    "accuracy_seen_std",
    "rank_fixed",
    "rank_seen",
]


# --- validation ---
def _format_location(loc) -> str:
    return ".".join(str(part) for part in loc)


def _alpha_errors(raw: Dict[str, Any]) -> List[str]:
    """Bounds of every alpha against the configured hidden stack, read from the raw mapping."""
    network = raw.get("network") or {}
    hidden = network.get("hidden", [32, 32]) if isinstance(network, dict) else None
    if not isinstance(hidden, list):
        return []
    head_index = len(hidden)
    candidates = []
    train = raw.get("train") or {}
    if isinstance(train, dict) and isinstance(train.get("alpha"), int):
        candidates.append(("train.alpha", train["alpha"]))
    sweep = raw.get("sweep") or {}
    if isinstance(sweep, dict) and isinstance(sweep.get("alphas"), list):
        candidates.extend((f"sweep.alphas.{i}", a) for i, a in enumerate(sweep["alphas"]) if isinstance(a, int))
    return [
        f"{where}: replay layer {alpha} is not a valid layer index (use 0 or a hidden layer below {head_index})"
        for where, alpha in candidates
        if alpha != 0 and not 0 < alpha < head_index
    ]


def _override_errors(config: ExperimentConfig) -> List[str]:
    errors = []
    for strategy, override in config.strategy_overrides.items():
        try:
            TrainConfig.model_validate({**config.train.model_dump(), **override})
        except ValidationError as exc:
            errors.extend(
                f"strategy_overrides.{strategy.value}.{_format_location(e['loc'])}: {e['msg']}" for e in exc.errors()
            )
    return errors


def validate_config(raw_text: str) -> ExperimentConfig:
    """Parse YAML text into an ExperimentConfig, reporting every violation at once."""
    try:
        raw = yaml.safe_load(raw_text) or {}
    except yaml.YAMLError as exc:
        raise ConfigValidationError([f"config is not valid YAML: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigValidationError(["config must be a mapping at the top level"])

    errors = []
    config = None
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        errors.extend(f"{_format_location(e['loc'])}: {e['msg']}" for e in exc.errors())
    errors.extend(_alpha_errors(raw))
    if config is not None:
        errors.extend(_override_errors(config))
    if errors:
        raise ConfigValidationError(errors)
    return config


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config not found at {path}")
    return validate_config(path.read_text())


# --- cells ---
@dataclass(frozen=True)
class Cell:
    strategy: str
    alpha: int
    rm_size: int
    seed: int

    @property
    def name(self) -> str:
        if self.strategy == CUMULATIVE:
            return f"{CUMULATIVE}_s{self.seed}"
        return f"{self.strategy}_a{self.alpha}_rm{self.rm_size}_s{self.seed}"


@dataclass
class CellResult:
    cell: Cell
    status: str  # "done" | "failed"
    error: Optional[str] = None


def plan_cells(config: ExperimentConfig) -> List[Cell]:
    cells = [Cell(strategy.value, alpha, rm, seed) for strategy, alpha, rm, seed in config.sweep.cells(config.train)]
    if config.evaluate_upper_bound:
        seeds = sorted({cell.seed for cell in cells})
        cells.extend(Cell(CUMULATIVE, 0, 0, seed) for seed in seeds)
    return cells


def build_network(config: ExperimentConfig, input_dim: int, n_classes: int, rng: np.random.Generator) -> Network:
    """Fresh network from the seeded init stream, or the configured pre-trained checkpoint."""
    if config.network.checkpoint is not None:
        net = load_network(config.network.checkpoint)
        if net.input_width != input_dim or net.n_classes != n_classes:
            raise DimensionError(
                f"Checkpoint maps {net.input_width} -> {net.n_classes}, the dataset needs {input_dim} -> {n_classes}"
            )
        return net
    return Network.build(input_dim, config.network.hidden, n_classes, rng, head_std=config.network.head_std)


def _write_json(path: Path, payload: Dict[str, Any]):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)


def _prepare(config: ExperimentConfig, seed: int):
    init_seq, stream_seq, learner_seq = np.random.SeedSequence(seed).spawn(3)
    dataset = build_dataset(config.dataset)
    stream_seed = int(stream_seq.generate_state(1)[0])
    stream = build_stream(dataset, config.stream, stream_seed)
    net = build_network(config, dataset.input_dim, dataset.n_classes, np.random.default_rng(init_seq))
    return stream, net, learner_seq


def _run_continual(stream: Stream, learner: ContinualLearner, log: MetricsLog, cell_dir: Path):
    for experience in stream:
        started = time.perf_counter()
        learner.learn(experience.x_train, experience.y_train, classes=experience.classes)
        wall_time = time.perf_counter() - started
        drift = None
        if learner.config.track_drift and len(learner.memory):
            drift = learner.memory.activation_drift(learner.net)
        log.add(evaluate_after(learner, stream, experience.index, wall_time, drift))
        log.write_csv(cell_dir / "metrics.csv")


def _run_cumulative(stream: Stream, net: Network, config: TrainConfig, learner_seq, log: MetricsLog, cell_dir: Path):
    started = time.perf_counter()
    learner = train_cumulative(stream, net, config, seed_sequence=learner_seq)
    record = evaluate_after(learner, stream, len(stream), time.perf_counter() - started)
    log.add(record.model_copy(update={"experience": 1}))
    log.write_csv(cell_dir / "metrics.csv")


def run_cell(config: ExperimentConfig, cell: Cell, root: Path) -> CellResult:
    """Run one sweep cell. Failures are recorded on disk, never raised."""
    cell_dir = Path(root) / cell.name
    cell_dir.mkdir(parents=True, exist_ok=True)
    for marker in ("DONE", "FAILED"):
        (cell_dir / marker).unlink(missing_ok=True)

    log = MetricsLog()
    try:
        strategy = StrategyTag.NAIVE if cell.strategy == CUMULATIVE else StrategyTag(cell.strategy)
        train = config.cell_config(strategy, cell.alpha, cell.rm_size, cell.seed)
        stream, net, learner_seq = _prepare(config, cell.seed)
        _write_json(cell_dir / "stream.json", stream.manifest())

        if cell.strategy == CUMULATIVE:
            _run_cumulative(stream, net, train, learner_seq, log, cell_dir)
        else:
            learner = ContinualLearner(net, train, seed_sequence=learner_seq)
            _run_continual(stream, learner, log, cell_dir)

        log.write_summary(
            cell_dir / "summary.json",
            cell=cell.name,
            strategy=cell.strategy,
            alpha=cell.alpha,
            rm_size=cell.rm_size,
            seed=cell.seed,
            train=train.model_dump(mode="json"),
            experiment=config.model_dump(mode="json"),
            comparability_key=config.comparability_key(),
        )
        (cell_dir / "DONE").touch()
        logger.info("Cell %s done: fixed %.4f", cell.name, log.final().accuracy_fixed)
        return CellResult(cell, "done")
    except Exception as exc:
        (cell_dir / "FAILED").write_text(traceback.format_exc())
        logger.error("Cell %s failed after %d experiences: %s", cell.name, len(log), exc)
        return CellResult(cell, "failed", error=str(exc))


def run_experiment(
    config: ExperimentConfig,
    output_dir: Optional[Path] = None,
    workers: Optional[int] = None,
    seed_override: Optional[int] = None,
) -> List[CellResult]:
    """Run every cell of the sweep, then write the comparison table when enough cells finished."""
    if seed_override is not None:
        config = config.model_copy(update={"sweep": config.sweep.model_copy(update={"seeds": [seed_override]})})
    root = Path(output_dir or config.output_dir) / config.name
    root.mkdir(parents=True, exist_ok=True)
    workers = workers or settings.workers
    cells = plan_cells(config)
    logger.info("Running %d cells of '%s' into %s with %d worker(s)", len(cells), config.name, root, workers)

    if workers == 1:
        results = [run_cell(config, cell, root) for cell in tqdm(cells, desc="cells")]
    else:
        results = Parallel(n_jobs=workers)(delayed(run_cell)(config, cell, root) for cell in cells)

    finished = sum(result.status == "done" for result in results)
    if finished >= 2:
        compare_runs(root)
    return results


# --- comparison ---
def _read_summaries(result_dir: Path) -> List[Dict[str, Any]]:
    summaries = []
    for summary_path in sorted(Path(result_dir).glob("*/summary.json")):
        if not (summary_path.parent / "DONE").exists():
            logger.warning("Skipping %s: no DONE marker", summary_path.parent.name)
            continue
        with open(summary_path) as f:
            summaries.append(json.load(f))
    return summaries


def compare_runs(result_dir: Path) -> pd.DataFrame:
    """Mean and population std of final accuracy per cell over seeds, best first."""
    result_dir = Path(result_dir)
    summaries = _read_summaries(result_dir)
    if len(summaries) < 2:
        raise InputError(f"Comparison needs at least 2 finished cells, found {len(summaries)} in {result_dir}")

    reference = summaries[0]
    for summary in summaries[1:]:
        if summary["comparability_key"] != reference["comparability_key"]:
            raise ComparabilityError(
                f"Cell {summary['cell']} was run on a different dataset, stream or network than {reference['cell']}"
            )

    frame = pd.DataFrame(summaries)
    table = (
        frame.groupby(["strategy", "alpha", "rm_size"])
        .agg(
            n_seeds=("seed", "count"),
            accuracy_fixed_mean=("final_accuracy_fixed", "mean"),
            accuracy_fixed_std=("final_accuracy_fixed", lambda s: float(np.std(s, ddof=0))),
            accuracy_seen_mean=("final_accuracy_seen", "mean"),
            accuracy_seen_std=("final_accuracy_seen", lambda s: float(np.std(s, ddof=0))),
        )
        .reset_index()
    )
    table["rank_fixed"] = table["accuracy_fixed_mean"].rank(ascending=False, method="min").astype(int)
    table["rank_seen"] = table["accuracy_seen_mean"].rank(ascending=False, method="min").astype(int)
    table = table.sort_values(
        ["accuracy_fixed_mean", "strategy", "alpha", "rm_size"], ascending=[False, True, True, True]
    ).reset_index(drop=True)[COMPARISON_COLUMNS]

    table.to_csv(result_dir / "comparison.csv", index=False, float_format="%.6f")
    (result_dir / "comparison.txt").write_text(
        table.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n"
    )
    logger.info("Comparison of %d cells written to %s", len(table), result_dir)
    return table
