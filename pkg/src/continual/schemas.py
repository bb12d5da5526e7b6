import enum
import itertools
import math
from pathlib import Path
from typing import Annotated, Any, Dict, Iterator, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from .config import settings


class StrategyTag(str, enum.Enum):
    NAIVE = "naive"
    CWR = "cwr"
    EWC = "ewc"
    ARR = "arr"


class ReplayStorage(str, enum.Enum):
    LATENT = "latent"
    RAW = "raw"


# --- Data sources ---
class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["synthetic"] = "synthetic"
    n_classes: int = Field(default=10, ge=2)
    samples_per_class: int = Field(default=200, ge=2)
    input_dim: int = Field(default=20, ge=1)
    center_scale: float = Field(default=1.0, gt=0)
    noise_std: float = Field(default=1.0, gt=0)
    seed: int = 0


class FileSource(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["file"] = "file"
    path: Path
    format: Literal["csv"] = "csv"
    n_classes: Optional[int] = Field(default=None, ge=2)
    test_fraction: float = Field(default=0.2, gt=0, lt=1)
    seed: int = 0


class StreamParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    protocol: Literal["nc", "repetition"] = "nc"
    classes_per_experience: int = Field(default=2, ge=1)
    n_experiences: int = Field(default=5, ge=2)
    new_class_fraction: float = Field(default=0.5, gt=0, le=1)


class NetworkSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden: List[Annotated[int, Field(ge=1)]] = Field(default_factory=lambda: [32, 32])
    head_std: float = Field(default=0.005, gt=0)
    checkpoint: Optional[Path] = None

    @property
    def head_index(self) -> int:
        return len(self.hidden)


# --- Training ---
class TrainConfig(BaseModel):
    """Hyperparameters of one ARR run. rm_size, lam and alpha default to 0."""

    model_config = ConfigDict(extra="forbid")

    strategy: StrategyTag = StrategyTag.ARR
    rm_size: int = Field(default=0, ge=0)
    lam: float = Field(default=0.0, ge=0)
    alpha: int = Field(default=0, ge=0)
    mb_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=4, ge=1)
    lr: float = Field(default=0.05, gt=0)
    below_alpha_lr: float = Field(default=1.0, ge=0, le=1)
    max_f: float = Field(default=1e-3, gt=0)
    seed: int = 0
    replay_storage: ReplayStorage = ReplayStorage.LATENT
    track_drift: bool = False
    fisher_samples: int = Field(default_factory=lambda: settings.fisher_max_samples, ge=1)

    @property
    def uses_cwr_head(self) -> bool:
        return self.strategy in (StrategyTag.CWR, StrategyTag.ARR)

    def resolved(self) -> "TrainConfig":
        """Collapse the knobs a baseline strategy does not use to their disabled values."""
        if self.strategy == StrategyTag.ARR:
            return self
        updates: Dict[str, Any] = {"rm_size": 0, "alpha": 0, "below_alpha_lr": 1.0}
        if self.strategy != StrategyTag.EWC:
            updates["lam"] = 0.0
        return self.model_copy(update=updates)


# --- Experiments ---
class SweepAxes(BaseModel):
    """Sweep values per axis. An omitted axis falls back to the single value in ``train``."""

    model_config = ConfigDict(extra="forbid")

    strategies: Optional[Annotated[List[StrategyTag], Field(min_length=1)]] = None
    alphas: Optional[Annotated[List[Annotated[int, Field(ge=0)]], Field(min_length=1)]] = None
    rm_sizes: Optional[Annotated[List[Annotated[int, Field(ge=0)]], Field(min_length=1)]] = None
    seeds: Optional[Annotated[List[int], Field(min_length=1)]] = None

    def axes(self, train: "TrainConfig") -> Tuple[List[StrategyTag], List[int], List[int], List[int]]:
        return (
            self.strategies or [train.strategy],
            self.alphas if self.alphas is not None else [train.alpha],
            self.rm_sizes if self.rm_sizes is not None else [train.rm_size],
            self.seeds or [train.seed],
        )

    def cells(self, train: "TrainConfig") -> Iterator[Tuple[StrategyTag, int, int, int]]:
        return itertools.product(*self.axes(train))

    def size(self, train: "TrainConfig") -> int:
        return math.prod(len(axis) for axis in self.axes(train))


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    dataset: Union[SyntheticSpec, FileSource] = Field(default_factory=SyntheticSpec, discriminator="kind")
    stream: StreamParams = Field(default_factory=StreamParams)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sweep: SweepAxes = Field(default_factory=SweepAxes)
    strategy_overrides: Dict[StrategyTag, Dict[str, Any]] = Field(default_factory=dict)
    evaluate_upper_bound: bool = False
    output_dir: Path = Field(default_factory=lambda: Path(settings.output_dir))

    def cell_config(self, strategy: StrategyTag, alpha: int, rm_size: int, seed: int) -> TrainConfig:
        data = self.train.model_dump()
        data.update(self.strategy_overrides.get(strategy, {}))
        data.update(strategy=strategy, alpha=alpha, rm_size=rm_size, seed=seed)
        return TrainConfig.model_validate(data).resolved()

    def comparability_key(self) -> Dict[str, Any]:
        """Sections that must match for two result cells to be compared."""
        return {
            "dataset": self.dataset.model_dump(mode="json"),
            "stream": self.stream.model_dump(mode="json"),
            "network": self.network.model_dump(mode="json"),
        }


class MetricsRecord(BaseModel):
    experience: int = Field(ge=1)
    accuracy_fixed: float = Field(ge=0, le=1)
    accuracy_seen: float = Field(ge=0, le=1)
    stream_loss: float = Field(ge=0)
    wall_time: float = Field(ge=0)
    activation_drift: Optional[float] = Field(default=None, ge=0)
