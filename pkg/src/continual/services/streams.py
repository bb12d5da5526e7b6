"""Continual-learning stream builders: datasets, class-incremental and repetition streams."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import MinMaxScaler

from ..exceptions import DatasetParseError, DatasetValidationError, InputError
from ..schemas import FileSource, StreamParams, SyntheticSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]


@dataclass(frozen=True)
class Experience:
    index: int  # 1-based
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classes: Tuple[int, ...]
    # Never read by any strategy: the task label is assumed unavailable
    task_label: Optional[int] = None

    def class_counts(self) -> Dict[int, int]:
        classes, counts = np.unique(self.y_train, return_counts=True)
        return {int(c): int(n) for c, n in zip(classes, counts)}


@dataclass(frozen=True)
class Stream:
    experiences: Tuple[Experience, ...]
    n_classes: int
    x_test: np.ndarray
    y_test: np.ndarray
    protocol: str = "nc"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.experiences)

    def __iter__(self):
        return iter(self.experiences)

    def manifest(self) -> Dict[str, Any]:
        """Per-experience class sets and sample counts, for the stream.json artifact."""
        return {
            "protocol": self.protocol,
            "n_classes": self.n_classes,
            "n_experiences": len(self.experiences),
            "test_samples": int(self.y_test.shape[0]),
            **self.metadata,
            "experiences": [
                {
                    "index": e.index,
                    "classes": list(e.classes),
                    "train_samples": int(e.y_train.shape[0]),
                    "test_samples": int(e.y_test.shape[0]),
                    "class_counts": {str(c): n for c, n in e.class_counts().items()},
                }
                for e in self.experiences
            ],
        }


# --- datasets ---
def _split(x: np.ndarray, y: np.ndarray, n_classes: int, test_fraction: float, seed: int) -> Dataset:
    _, counts = np.unique(y, return_counts=True)
    stratify = y if counts.min() >= 2 else None
    x_train, x_test, y_train, y_test = train_test_split(
        x, y, test_size=test_fraction, random_state=seed, stratify=stratify
    )
    return Dataset(x_train, y_train, x_test, y_test, n_classes)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Isotropic Gaussian clusters around seeded class centers, split 80/20 stratified."""
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.center_scale, size=(spec.n_classes, spec.input_dim))
    y = np.repeat(np.arange(spec.n_classes), spec.samples_per_class)
    x = centers[y] + rng.normal(0.0, spec.noise_std, size=(y.shape[0], spec.input_dim))
    return _split(x, y, spec.n_classes, test_fraction=0.2, seed=spec.seed)


def read_samples(path: Path, fmt: str = "csv", n_classes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Parse a dataset file into a raw feature matrix and integer labels.

    CSV layout: header row, real-valued feature columns, integer label in the
    last column.
    """
    if fmt != "csv":
        raise InputError(f"Unsupported dataset format '{fmt}'")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset not found at {path}")
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise DatasetParseError("file is empty", line=1) from exc
    except pd.errors.ParserError as exc:
        raise DatasetParseError(str(exc)) from exc
    if frame.shape[1] < 2:
        raise DatasetParseError("expected at least one feature column and a label column", line=1)
    if frame.empty:
        raise DatasetParseError("no data rows after the header", line=2)

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(numeric.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        # +2: one for the header, one for 1-based numbering
        raise DatasetParseError("non-numeric or missing value", line=int(bad_rows[0]) + 2)

    labels = numeric.iloc[:, -1].to_numpy()
    not_integer = np.flatnonzero(labels != np.round(labels))
    if not_integer.size:
        raise DatasetParseError("label is not an integer", line=int(not_integer[0]) + 2)
    labels = labels.astype(np.int64)
    if n_classes is not None:
        outside = np.flatnonzero((labels < 0) | (labels >= n_classes))
        if outside.size:
            raise DatasetValidationError(
                f"line {int(outside[0]) + 2}: label {labels[outside[0]]} outside [0, {n_classes})"
            )
    elif labels.min() < 0:
        raise DatasetValidationError(f"negative label {labels.min()}")

    return numeric.iloc[:, :-1].to_numpy(dtype=np.float64), labels


def load_dataset(
    path: Path, fmt: str = "csv", n_classes: Optional[int] = None, test_fraction: float = 0.2, seed: int = 0
) -> Dataset:
    """Read, split, then scale features to [0, 1] with bounds taken from the train split only."""
    x, y = read_samples(path, fmt, n_classes)
    n_classes = n_classes if n_classes is not None else int(y.max()) + 1
    logger.info("Loaded %d samples with %d features from %s", len(y), x.shape[1], path)
    dataset = _split(x, y, n_classes, test_fraction, seed)
    scaler = MinMaxScaler().fit(dataset.x_train)
    return Dataset(
        scaler.transform(dataset.x_train), dataset.y_train, scaler.transform(dataset.x_test), dataset.y_test, n_classes
    )


def build_dataset(source: SyntheticSpec | FileSource) -> Dataset:
    if isinstance(source, SyntheticSpec):
        return generate_synthetic(source)
    return load_dataset(source.path, source.format, source.n_classes, source.test_fraction, source.seed)


# --- streams ---
def _experience(dataset: Dataset, index: int, train_rows: np.ndarray, classes: Sequence[int]) -> Experience:
    classes = tuple(sorted(int(c) for c in classes))
    test_rows = np.flatnonzero(np.isin(dataset.y_test, classes))
    train_rows = np.sort(train_rows)
    return Experience(
        index=index,
        x_train=dataset.x_train[train_rows],
        y_train=dataset.y_train[train_rows],
        x_test=dataset.x_test[test_rows],
        y_test=dataset.y_test[test_rows],
        classes=classes,
    )


def make_nc_stream(dataset: Dataset, classes_per_experience: int, seed: int) -> Stream:
    """Seeded random partition of the classes into groups; the last group takes the remainder."""
    if classes_per_experience < 1 or classes_per_experience > dataset.n_classes:
        raise InputError(
            f"classes_per_experience={classes_per_experience} must lie in [1, {dataset.n_classes}]"
        )
    order = np.random.default_rng(seed).permutation(dataset.n_classes)
    groups = [order[i : i + classes_per_experience] for i in range(0, dataset.n_classes, classes_per_experience)]
    experiences = tuple(
        _experience(dataset, i + 1, np.flatnonzero(np.isin(dataset.y_train, group)), group)
        for i, group in enumerate(groups)
    )
    return Stream(experiences, dataset.n_classes, dataset.x_test, dataset.y_test, protocol="nc")


def make_repetition_stream(dataset: Dataset, n_experiences: int, new_class_fraction: float, seed: int) -> Stream:
    """Class-incremental stream with repetition.

    Classes are introduced in near-equal groups, one group per experience.
    Every later experience also revisits round(k * (1 - f) / f) already-seen
    classes, where k is its number of new classes. Each class's training
    samples are divided evenly over its appearances, so no sample is used twice.
    """
    if n_experiences < 2:
        raise InputError(f"A repetition stream needs at least 2 experiences, got {n_experiences}")
    if not 0 < new_class_fraction <= 1:
        raise InputError(f"new_class_fraction must lie in (0, 1], got {new_class_fraction}")
    if dataset.n_classes < n_experiences:
        raise InputError(
            f"{dataset.n_classes} classes cannot introduce new classes in each of {n_experiences} experiences"
        )
    rng = np.random.default_rng(seed)
    new_groups = np.array_split(rng.permutation(dataset.n_classes), n_experiences)

    schedule: List[List[int]] = []
    seen: List[int] = []
    for group in new_groups:
        n_repeat = int(round(len(group) * (1.0 - new_class_fraction) / new_class_fraction))
        n_repeat = min(n_repeat, len(seen))
        repeated = rng.choice(seen, size=n_repeat, replace=False).tolist() if n_repeat else []
        schedule.append([int(c) for c in group] + [int(c) for c in repeated])
        seen.extend(int(c) for c in group)

    appearances: Dict[int, List[int]] = {c: [] for c in range(dataset.n_classes)}
    for position, classes in enumerate(schedule):
        for c in classes:
            appearances[c].append(position)

    rows_per_experience: List[List[np.ndarray]] = [[] for _ in schedule]
    for c, positions in appearances.items():
        rows = rng.permutation(np.flatnonzero(dataset.y_train == c))
        if rows.size < len(positions):
            raise InputError(
                f"Class {c} has {rows.size} training samples but appears in {len(positions)} experiences"
            )
        for position, chunk in zip(positions, np.array_split(rows, len(positions))):
            rows_per_experience[position].append(chunk)

    experiences = tuple(
        _experience(dataset, i + 1, np.concatenate(chunks), classes)
        for i, (chunks, classes) in enumerate(zip(rows_per_experience, schedule))
    )
    return Stream(
        experiences,
        dataset.n_classes,
        dataset.x_test,
        dataset.y_test,
        protocol="repetition",
        metadata={"new_class_fraction": new_class_fraction},
    )


def build_stream(dataset: Dataset, params: StreamParams, seed: int) -> Stream:
    if params.protocol == "nc":
        return make_nc_stream(dataset, params.classes_per_experience, seed)
    return make_repetition_stream(dataset, params.n_experiences, params.new_class_fraction, seed)
