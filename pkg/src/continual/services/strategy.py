"""ARR training procedure and its baseline special cases.

The learner owns the CWR* head (cw, tw, past counters), a single Fisher
state updated at the end of every experience, and the external replay
memory. After the first experience, layers below alpha learn at
``lr * below_alpha_lr``; layers from alpha up to (not including) the head
are the regularized group; the head trains tw at the full rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import ConfigurationError, InputError, StateError
from ..schemas import ReplayStorage, StrategyTag, TrainConfig
from .network import LayerParams, Network, check_finite, cross_entropy
from .replay import ReplayMemory

logger = logging.getLogger(__name__)


def minibatch_split(n_experience: int, rm_size: int, mb_size: int, is_first: bool) -> Tuple[int, int]:
    """(mb_e, mb_r): how many fresh and replay rows each mini-batch carries."""
    if is_first or rm_size == 0:
        return mb_size, 0
    exact = n_experience / ((n_experience + rm_size) / mb_size)
    mb_e = min(max(math.floor(exact + 0.5), 1), mb_size)
    return mb_e, mb_size - mb_e


# --- CWR* head ---
@dataclass
class ClassifierHead:
    """Consolidated (cw) and temporary (tw) output weights plus per-class past counts.

    Weights are stored column-per-class, matching the network head layer.
    """

    cw: LayerParams
    tw: LayerParams
    past: np.ndarray

    @classmethod
    def zeros(cls, width: int, n_classes: int) -> "ClassifierHead":
        return cls(
            cw=LayerParams(np.zeros((width, n_classes)), np.zeros(n_classes)),
            tw=LayerParams(np.zeros((width, n_classes)), np.zeros(n_classes)),
            past=np.zeros(n_classes, dtype=np.int64),
        )

    @classmethod
    def from_network(cls, net: Network) -> "ClassifierHead":
        """Head that starts from the network's own initialized head layer."""
        head = cls(cw=net.head.params.copy(), tw=net.head.params.copy(), past=np.zeros(net.n_classes, dtype=np.int64))
        return head

    @property
    def n_classes(self) -> int:
        return self.past.shape[0]

    def _check_classes(self, classes: Iterable[int]) -> np.ndarray:
        classes = np.unique(np.asarray(list(classes), dtype=np.int64))
        if classes.size and (classes.min() < 0 or classes.max() >= self.n_classes):
            raise InputError(f"Class ids {classes.tolist()} outside the universe of {self.n_classes} classes")
        return classes

    def begin_experience(self, classes: Iterable[int], replayed: Iterable[int] = ()) -> LayerParams:
        """tw[j] = cw[j] for classes trained in the experience, 0 otherwise.

        Classes that only reach the experience through replay rows count as trained.
        """
        present = self._check_classes(set(classes) | set(replayed))
        self.tw = LayerParams.zeros_like(self.cw)
        self.tw.weight[:, present] = self.cw.weight[:, present]
        self.tw.bias[present] = self.cw.bias[present]
        return self.tw

    def consolidate(self, counts: Mapping[int, int], replayed: Optional[Mapping[int, int]] = None) -> LayerParams:
        """Fold tw into cw for the classes of the experience and advance past_j.

        ``replayed`` maps replay-only classes to their memory entry count, which
        stands in for cur_j; their past_j counters do not move.
        """
        fresh = {int(j): int(n) for j, n in counts.items()}
        merged = {int(j): int(n) for j, n in (replayed or {}).items() if int(j) not in fresh}
        merged.update(fresh)
        present = self._check_classes(merged.keys())
        cur = np.array([merged[int(j)] for j in present], dtype=np.int64)
        if (cur < 1).any():
            missing = present[cur < 1].tolist()
            raise InputError(f"Classes {missing} are claimed present but have no samples")
        # Scalar means over the present classes only; absent tw columns are structural zeros
        weight_avg = self.tw.weight[:, present].mean()
        bias_avg = self.tw.bias[present].mean()
        for j, cur_j in zip(present, cur):
            wpast = math.sqrt(self.past[j] / cur_j)
            self.cw.weight[:, j] = (self.cw.weight[:, j] * wpast + (self.tw.weight[:, j] - weight_avg)) / (wpast + 1)
            self.cw.bias[j] = (self.cw.bias[j] * wpast + (self.tw.bias[j] - bias_avg)) / (wpast + 1)
            if int(j) in fresh:
                self.past[j] += cur_j
        return self.cw

    def adopt_temporary(self, counts: Mapping[int, int]) -> LayerParams:
        """Plain head: whatever was trained becomes the inference weights."""
        present = self._check_classes(counts.keys())
        self.cw = self.tw.copy()
        for j in present:
            self.past[j] += counts[int(j)]
        return self.cw

    def load_temporary(self, net: Network):
        net.head.weight[...] = self.tw.weight
        net.head.bias[...] = self.tw.bias

    def store_temporary(self, net: Network):
        self.tw = net.head.params.copy()

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.cw.weight + self.cw.bias


# --- Fisher importance ---
@dataclass
class FisherState:
    """One diagonal Fisher matrix shared across experiences.

    ``mean`` is the unclipped running mean of the per-experience estimates;
    F is that mean clipped to [0, max_f]. ARR scales learning rates by
    1 - F/max_f; the EWC penalty uses lam * F.
    """

    mean: List[LayerParams]
    max_f: float
    lam: float
    theta_star: Optional[List[LayerParams]] = None
    updates: int = 0

    @classmethod
    def for_network(cls, net: Network, max_f: float, lam: float) -> "FisherState":
        if max_f <= 0:
            raise ConfigurationError(f"max_F must be positive, got {max_f}")
        return cls(mean=[LayerParams.zeros_like(p) for p in net.parameters()[:-1]], max_f=max_f, lam=lam)

    @property
    def f(self) -> List[LayerParams]:
        return [self.clipped(index) for index in range(len(self.mean))]

    def clipped(self, index: int) -> LayerParams:
        mean = self.mean[index]
        return LayerParams(np.clip(mean.weight, 0.0, self.max_f), np.clip(mean.bias, 0.0, self.max_f))

    def update(self, estimate: Sequence[LayerParams]) -> List[LayerParams]:
        weight = self.updates
        for index, (stored, new) in enumerate(zip(self.mean, estimate)):
            self.mean[index] = LayerParams(
                (stored.weight * weight + new.weight) / (weight + 1),
                (stored.bias * weight + new.bias) / (weight + 1),
            )
        self.updates += 1
        return self.f

    def scale(self, index: int) -> LayerParams:
        """Learning-rate factor 1 - F/max_F for one class-shared layer."""
        f = self.clipped(index)
        return LayerParams(1.0 - f.weight / self.max_f, 1.0 - f.bias / self.max_f)

    def penalty(self, index: int) -> LayerParams:
        """EWC pull strength lam * F for one class-shared layer."""
        f = self.clipped(index)
        return LayerParams(self.lam * f.weight, self.lam * f.bias)

    def snapshot(self, net: Network):
        self.theta_star = [p.copy() for p in net.parameters()[:-1]]


def update_fisher(fisher: FisherState, net: Network, batch: np.ndarray, labels: np.ndarray) -> List[LayerParams]:
    """Fold this experience's empirical diagonal Fisher into ``fisher``."""
    if len(labels) == 0:
        raise InputError("Fisher estimation needs at least one sample")
    squares = net.sample_gradient_squares(batch, labels)
    return fisher.update(squares[:-1])


def ewc_step(net: Network, gradients: Sequence[LayerParams], fisher: FisherState, rate: float, layers: Iterable[int]):
    """theta -= rate * grad + rate * lam * F * (theta - theta*)."""
    if fisher.theta_star is None:
        raise StateError("EWC update needs a theta* snapshot from a previous experience")
    for index in layers:
        check_finite(gradients[index], index)
        layer = net.layers[index]
        f, anchor, grad = fisher.penalty(index), fisher.theta_star[index], gradients[index]
        layer.weight -= rate * grad.weight + rate * f.weight * (layer.weight - anchor.weight)
        layer.bias -= rate * grad.bias + rate * f.bias * (layer.bias - anchor.bias)
    return net


def predict(net: Network, head: ClassifierHead, batch: np.ndarray) -> np.ndarray:
    """Argmax over cw logits; np.argmax breaks ties toward the lowest class."""
    return np.argmax(head.logits(net.features(batch)), axis=1)


def class_counts(labels: np.ndarray) -> dict[int, int]:
    classes, counts = np.unique(labels, return_counts=True)
    return {int(c): int(n) for c, n in zip(classes, counts)}


@dataclass
class ContinualLearner:
    """One ARR run (or a baseline special case) over a stream of experiences."""

    net: Network
    config: TrainConfig
    seed_sequence: np.random.SeedSequence = field(default=None)
    head: ClassifierHead = field(init=False)
    fisher: FisherState = field(init=False)
    memory: ReplayMemory = field(init=False)
    experiences_seen: int = field(init=False, default=0)

    def __post_init__(self):
        self.config = self.config.resolved()
        cfg = self.config
        if cfg.alpha != 0 and cfg.alpha >= self.net.head_index:
            raise ConfigurationError(
                f"Replay layer alpha={cfg.alpha} must lie strictly below the head (layer {self.net.head_index})"
            )
        if self.seed_sequence is None:
            self.seed_sequence = np.random.SeedSequence(cfg.seed)
        train_seq, memory_seq, fisher_seq = self.seed_sequence.spawn(3)
        self.train_rng = np.random.default_rng(train_seq)
        self.memory_rng = np.random.default_rng(memory_seq)
        self.fisher_rng = np.random.default_rng(fisher_seq)

        width = self.net.width_at(self.net.head_index)
        if cfg.uses_cwr_head:
            self.head = ClassifierHead.zeros(width, self.net.n_classes)
        else:
            self.head = ClassifierHead.from_network(self.net)
        self.fisher = FisherState.for_network(self.net, cfg.max_f, cfg.lam)
        storage_layer = 0 if cfg.replay_storage == ReplayStorage.RAW else cfg.alpha
        self.memory = ReplayMemory(
            rm_size=cfg.rm_size,
            alpha=storage_layer,
            pattern_width=self.net.width_at(storage_layer),
            keep_inputs=cfg.track_drift,
        )

    # --- layer groups ---
    @property
    def below_alpha(self) -> range:
        return range(0, self.config.alpha)

    @property
    def regularized(self) -> range:
        return range(self.config.alpha, self.net.head_index)

    # --- inference ---
    def logits(self, batch: np.ndarray) -> np.ndarray:
        return self.head.logits(self.net.features(batch))

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return predict(self.net, self.head, batch)

    # --- one experience ---
    def learn(self, x_train: np.ndarray, y_train: np.ndarray, classes: Optional[Iterable[int]] = None):
        """begin_experience, train, consolidate, Fisher update and memory update."""
        x_train = np.asarray(x_train, dtype=np.float64)
        y_train = np.asarray(y_train, dtype=np.int64)
        if not len(y_train):
            raise InputError("An experience needs at least one training sample")
        counts = class_counts(y_train)
        classes = counts.keys() if classes is None else classes
        self.experiences_seen += 1
        index = self.experiences_seen

        replayed = class_counts(self.memory.labels) if len(self.memory) else {}
        if self.config.uses_cwr_head:
            self.head.begin_experience(classes, replayed)
        self.head.load_temporary(self.net)
        self.train_experience(x_train, y_train)
        self.head.store_temporary(self.net)
        if self.config.uses_cwr_head:
            self.head.consolidate(counts, replayed)
        else:
            self.head.adopt_temporary(counts)

        if self.config.strategy in (StrategyTag.ARR, StrategyTag.EWC) and self.config.lam > 0:
            n = min(len(y_train), self.config.fisher_samples)
            rows = self.fisher_rng.permutation(len(y_train))[:n]
            update_fisher(self.fisher, self.net, x_train[rows], y_train[rows])
            self.fisher.snapshot(self.net)

        if self.config.rm_size:
            patterns = self.net.activations_at(x_train, self.memory.alpha)
            self.memory.update(
                patterns,
                y_train,
                index,
                self.memory_rng,
                inputs=x_train if self.memory.keep_inputs else None,
            )
        logger.info(
            "Experience %d done: %d samples, classes %s, memory %d/%d",
            index,
            len(y_train),
            sorted(counts),
            len(self.memory),
            self.config.rm_size,
        )
        return self

    def _replay_rows(self, patterns: np.ndarray) -> np.ndarray:
        """Bring stored patterns to layer alpha (raw storage goes through the frozen layers)."""
        if self.memory.alpha == self.config.alpha:
            return patterns
        return self.net.activations_at(patterns, self.config.alpha, from_layer=self.memory.alpha)

    def train_experience(self, x_train: np.ndarray, y_train: np.ndarray):
        cfg = self.config
        is_first = self.experiences_seen == 1
        n = len(y_train)
        if len(self.memory) and self.memory.pattern_width != self.net.width_at(self.memory.alpha):
            raise ConfigurationError(
                f"Memory patterns have width {self.memory.pattern_width}, "
                f"layer {self.memory.alpha} produces {self.net.width_at(self.memory.alpha)}"
            )
        mb_e, mb_r = minibatch_split(n, cfg.rm_size, cfg.mb_size, is_first or not len(self.memory))

        regularize = not is_first and self.fisher.updates > 0
        use_ewc = regularize and cfg.strategy == StrategyTag.EWC
        for index in self.regularized:
            if regularize and cfg.strategy == StrategyTag.ARR:
                self.net.set_lr_scale(index, self.fisher.scale(index))
            else:
                self.net.set_lr_scale(index, LayerParams.full_like(self.net.layers[index].params, 1.0))

        sampler = self.memory.sampler(self.train_rng)
        below_rate = cfg.lr if is_first else cfg.lr * cfg.below_alpha_lr
        # Frozen layers below alpha need no gradients
        down_to = cfg.alpha if below_rate == 0 else 0
        for epoch in range(cfg.epochs):
            order = self.train_rng.permutation(n)
            losses = []
            for start in range(0, n, mb_e):
                rows = order[start : start + mb_e]
                latent, replay_labels = sampler.draw(mb_r)
                latent = self._replay_rows(latent) if mb_r else None
                logits = self.net.forward(x_train[rows], latent=latent, latent_layer=cfg.alpha)
                loss, gradient = cross_entropy(logits, np.concatenate([y_train[rows], replay_labels]))
                grads = self.net.backward(gradient, down_to=down_to)
                losses.append(loss)

                self.net.sgd_step(grads, cfg.lr, layers=[self.net.head_index])
                if use_ewc:
                    ewc_step(self.net, grads, self.fisher, cfg.lr, self.regularized)
                elif len(self.regularized):
                    self.net.sgd_step(grads, cfg.lr, layers=self.regularized)
                if below_rate > 0 and len(self.below_alpha):
                    self.net.sgd_step(grads, below_rate, layers=self.below_alpha)
            logger.debug("Experience %d epoch %d: mean loss %.4f", self.experiences_seen, epoch + 1, np.mean(losses))
