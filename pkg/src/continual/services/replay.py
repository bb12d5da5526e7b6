"""External random memory RM with latent-activation storage."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..exceptions import ConfigurationError, DimensionError, InputError, StateError
from .network import Network

logger = logging.getLogger(__name__)

MEMORY_FORMAT_VERSION = 1


def compute_h(rm_size: int, experience_index: int) -> int:
    """Number of entries experience ``i`` (1-based) contributes: floor(RM_size / i)."""
    if experience_index < 1:
        raise InputError(f"Experience index starts at 1, got {experience_index}")
    return rm_size // experience_index


@dataclass
class ReplayMemory:
    """Fixed-capacity store of (pattern at layer alpha, label, source experience)."""

    rm_size: int
    alpha: int
    pattern_width: int
    keep_inputs: bool = False
    patterns: np.ndarray = field(init=False)
    labels: np.ndarray = field(init=False)
    sources: np.ndarray = field(init=False)
    # Raw inputs of each entry, kept only for drift diagnostics
    inputs: Optional[np.ndarray] = field(init=False, default=None)

    def __post_init__(self):
        if self.rm_size < 0:
            raise ConfigurationError(f"RM_size must be non-negative, got {self.rm_size}")
        self.patterns = np.empty((0, self.pattern_width))
        self.labels = np.empty(0, dtype=np.int64)
        self.sources = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def composition(self) -> dict[int, int]:
        """Entry count per source experience."""
        experiences, counts = np.unique(self.sources, return_counts=True)
        return {int(e): int(c) for e, c in zip(experiences, counts)}

    def update(
        self,
        patterns: np.ndarray,
        labels: np.ndarray,
        experience_index: int,
        rng: np.random.Generator,
        inputs: Optional[np.ndarray] = None,
    ) -> "ReplayMemory":
        """Insert h random samples of the experience, evicting as many random entries.

        ``patterns`` must already be the activations at layer alpha. While the
        memory still has free slots they are filled before anything is evicted.
        No class balancing is attempted.
        """
        patterns = np.asarray(patterns, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if patterns.ndim != 2 or patterns.shape[1] != self.pattern_width:
            raise DimensionError(
                f"Memory stores patterns of width {self.pattern_width}, got shape {patterns.shape}"
            )
        if labels.shape != (patterns.shape[0],):
            raise DimensionError(f"{patterns.shape[0]} patterns but {labels.shape} labels")
        if self.keep_inputs and inputs is None:
            raise StateError("Memory keeps raw inputs for diagnostics but none were given")

        h = compute_h(self.rm_size, experience_index)
        n_add = min(h, patterns.shape[0])
        if n_add == 0:
            return self
        added = rng.choice(patterns.shape[0], size=n_add, replace=False)

        keep = np.arange(len(self))
        if experience_index > 1:
            n_replace = max(0, len(self) + n_add - self.rm_size)
            n_replace = min(n_replace, len(self))
            if n_replace:
                replaced = rng.choice(len(self), size=n_replace, replace=False)
                keep = np.setdiff1d(keep, replaced)
        else:
            keep = keep[:0]

        self.patterns = np.concatenate([self.patterns[keep], patterns[added]])
        self.labels = np.concatenate([self.labels[keep], labels[added]])
        self.sources = np.concatenate([self.sources[keep], np.full(n_add, experience_index, dtype=np.int64)])
        if self.keep_inputs:
            inputs = np.asarray(inputs, dtype=np.float64)
            previous = self.inputs[keep] if self.inputs is not None else np.empty((0, inputs.shape[1]))
            self.inputs = np.concatenate([previous, inputs[added]])

        logger.debug(
            "Memory after experience %d: %d entries, composition %s",
            experience_index,
            len(self),
            self.composition(),
        )
        return self

    def sampler(self, rng: np.random.Generator) -> "ReplaySampler":
        return ReplaySampler(self, rng)

    def activation_drift(self, net: Network, layer: Optional[int] = None) -> float:
        """Mean L2 distance between stored patterns and the activations ``net`` gives now."""
        if self.inputs is None:
            raise StateError("Drift needs the raw-input diagnostic log (keep_inputs=True)")
        if not len(self):
            return 0.0
        layer = self.alpha if layer is None else layer
        current = net.activations_at(self.inputs, layer)
        return float(np.linalg.norm(self.patterns - current, axis=1).mean())

    # --- persistence ---
    def dump(self, path: Path):
        """Write the memory as an .npz archive.

        Fields: format_version, entry_count, alpha, pattern_width, then the
        records as parallel arrays patterns (entry_count x pattern_width,
        float64), labels (int64) and sources (int64, 1-based experience).
        """
        np.savez(
            path,
            format_version=MEMORY_FORMAT_VERSION,
            entry_count=len(self),
            rm_size=self.rm_size,
            alpha=self.alpha,
            pattern_width=self.pattern_width,
            patterns=self.patterns,
            labels=self.labels,
            sources=self.sources,
        )

    @classmethod
    def load(cls, path: Path) -> "ReplayMemory":
        with np.load(path) as archive:
            version = int(archive["format_version"])
            if version != MEMORY_FORMAT_VERSION:
                raise StateError(f"Unsupported memory dump version {version}")
            memory = cls(
                rm_size=int(archive["rm_size"]),
                alpha=int(archive["alpha"]),
                pattern_width=int(archive["pattern_width"]),
            )
            memory.patterns = archive["patterns"].reshape(-1, memory.pattern_width)
            memory.labels = archive["labels"]
            memory.sources = archive["sources"]
            if len(memory) != int(archive["entry_count"]):
                raise StateError("Memory dump entry count does not match its records")
        return memory


class ReplaySampler:
    """Draws replay rows without replacement, reshuffling once the memory is exhausted."""

    def __init__(self, memory: ReplayMemory, rng: np.random.Generator):
        self.memory = memory
        self.rng = rng
        self._queue = np.empty(0, dtype=np.int64)

    def draw(self, mb_r: int) -> Tuple[np.ndarray, np.ndarray]:
        if mb_r == 0:
            return np.empty((0, self.memory.pattern_width)), np.empty(0, dtype=np.int64)
        if not len(self.memory):
            raise StateError(f"Cannot sample {mb_r} replay rows from an empty memory")
        picked = []
        needed = mb_r
        while needed:
            if not self._queue.size:
                self._queue = self.rng.permutation(len(self.memory))
            take = self._queue[:needed]
            self._queue = self._queue[needed:]
            picked.append(take)
            needed -= take.size
        rows = np.concatenate(picked)
        return self.memory.patterns[rows], self.memory.labels[rows]


def sample_replay(memory: ReplayMemory, mb_r: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """One-off draw of ``mb_r`` entries; use ``memory.sampler`` for epoch coverage."""
    return memory.sampler(rng).draw(mb_r)
