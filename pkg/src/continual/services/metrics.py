"""Stream-level loss and accuracy under the fixed and seen-classes test protocols."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from ..exceptions import InputError
from ..schemas import MetricsRecord, StrategyTag, TrainConfig
from .network import Network, per_sample_cross_entropy
from .strategy import ContinualLearner
from .streams import Stream

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["experience", "metric", "value"]


class Scorer(Protocol):
    def logits(self, batch: np.ndarray) -> np.ndarray: ...


def stream_loss(model: Scorer, test_sets: Iterable[Tuple[np.ndarray, np.ndarray]]) -> float:
    """Summed per-sample cross-entropy over every test set, divided by the total sample count."""
    total, count = 0.0, 0
    for x, y in test_sets:
        if len(y) == 0:
            continue
        total += float(per_sample_cross_entropy(model.logits(x), y).sum())
        count += len(y)
    if count == 0:
        raise InputError("Stream loss needs at least one test sample")
    return total / count


def _accuracy(model: Scorer, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    predictions = np.argmax(model.logits(x), axis=1)
    return float(np.mean(predictions == y))


def accuracy_fixed(model: Scorer, x_test: np.ndarray, y_test: np.ndarray) -> float:
    return _accuracy(model, x_test, y_test)


def accuracy_seen(model: Scorer, x_test: np.ndarray, y_test: np.ndarray, seen_classes: Iterable[int]) -> float:
    """Accuracy restricted to test samples whose label was already encountered."""
    seen = np.asarray(sorted(set(int(c) for c in seen_classes)))
    if not seen.size:
        raise InputError("The seen-class set is empty")
    rows = np.isin(y_test, seen)
    return _accuracy(model, x_test[rows], y_test[rows])


def train_cumulative(
    stream: Stream,
    net_template: Network,
    config: TrainConfig,
    seed_sequence: Optional[np.random.SeedSequence] = None,
):
    """Joint (non-continual) training on the i.i.d. shuffled union of all experiences."""
    x = np.concatenate([e.x_train for e in stream])
    y = np.concatenate([e.y_train for e in stream])
    rows = np.random.default_rng(config.seed).permutation(len(y))
    joint = config.model_copy(update={"strategy": StrategyTag.NAIVE})
    learner = ContinualLearner(net_template.clone(), joint, seed_sequence=seed_sequence)
    learner.learn(x[rows], y[rows])
    return learner


def cumulative_upper_bound(stream: Stream, net_template: Network, config: TrainConfig) -> float:
    """Fixed-test accuracy of the jointly trained model, the non-continual ceiling."""
    learner = train_cumulative(stream, net_template, config)
    accuracy = accuracy_fixed(learner, stream.x_test, stream.y_test)
    logger.info("Cumulative upper bound: %.4f", accuracy)
    return accuracy


@dataclass
class MetricsLog:
    records: List[MetricsRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: MetricsRecord):
        expected = len(self.records) + 1
        if record.experience != expected:
            raise InputError(f"Expected a record for experience {expected}, got {record.experience}")
        self.records.append(record)

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per experience per metric."""
        rows = [
            (record.experience, metric, value)
            for record in self.records
            for metric, value in record.model_dump(exclude={"experience"}, exclude_none=True).items()
        ]
        return pd.DataFrame(rows, columns=METRIC_COLUMNS)

    def write_csv(self, path: Path):
        self.to_frame().to_csv(path, index=False, float_format="%.10g")

    @classmethod
    def read_csv(cls, path: Path) -> "MetricsLog":
        frame = pd.read_csv(path).pivot(index="experience", columns="metric", values="value")
        log = cls()
        for experience, row in frame.iterrows():
            values = {k: v for k, v in row.items() if pd.notna(v)}
            log.add(MetricsRecord(experience=int(experience), **values))
        return log

    def final(self) -> Optional[MetricsRecord]:
        return self.records[-1] if self.records else None

    def summary(self, **extra: Any) -> Dict[str, Any]:
        final = self.final()
        return {
            "experiences": len(self.records),
            "final_accuracy_fixed": final.accuracy_fixed if final else None,
            "final_accuracy_seen": final.accuracy_seen if final else None,
            "final_stream_loss": final.stream_loss if final else None,
            "total_wall_time": float(sum(r.wall_time for r in self.records)),
            **extra,
        }

    def write_summary(self, path: Path, **extra: Any):
        with open(path, "w") as f:
            json.dump(self.summary(**extra), f, indent=2, sort_keys=True, default=str)


def evaluate_after(model: Scorer, stream: Stream, completed: int, wall_time: float, drift: Optional[float] = None) -> MetricsRecord:
    """Metrics after the first ``completed`` experiences of ``stream``."""
    seen_experiences: Sequence = stream.experiences[:completed]
    seen_classes = {c for e in seen_experiences for c in e.classes}
    return MetricsRecord(
        experience=completed,
        accuracy_fixed=accuracy_fixed(model, stream.x_test, stream.y_test),
        accuracy_seen=accuracy_seen(model, stream.x_test, stream.y_test, seen_classes),
        stream_loss=stream_loss(model, [(e.x_test, e.y_test) for e in seen_experiences]),
        wall_time=wall_time,
        activation_drift=drift,
    )
