"""Dense feed-forward network with explicit backpropagation.

Layer ``l`` consumes the activation volume "at layer l" (layer 0 consumes the
raw input) and produces the activation at layer ``l + 1``. The last layer is
the classifier head. Replay activations can be concatenated on the batch
dimension at any layer; those rows never reach the layers below it.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from ..exceptions import DimensionError, InputError, NumericError, StateError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")


@dataclass
class LayerParams:
    """A (weight, bias) pair. Used for parameters, gradients, scales and Fisher values."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros_like(cls, other: "LayerParams") -> "LayerParams":
        return cls(np.zeros_like(other.weight), np.zeros_like(other.bias))

    @classmethod
    def full_like(cls, other: "LayerParams", value: float) -> "LayerParams":
        return cls(np.full_like(other.weight, value), np.full_like(other.bias, value))

    def copy(self) -> "LayerParams":
        return LayerParams(self.weight.copy(), self.bias.copy())

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield "weight", self.weight
        yield "bias", self.bias


@dataclass
class DenseLayer:
    index: int
    weight: np.ndarray  # (in_width, out_width)
    bias: np.ndarray  # (out_width,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InputError(f"Unknown activation '{self.activation}' on layer {self.index}")
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(
                f"Layer {self.index}: weight {self.weight.shape} and bias {self.bias.shape} do not match"
            )

    @property
    def in_width(self) -> int:
        return self.weight.shape[0]

    @property
    def out_width(self) -> int:
        return self.weight.shape[1]

    @property
    def params(self) -> LayerParams:
        return LayerParams(self.weight, self.bias)

    def activate(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(z, 0.0) if self.activation == "relu" else z


@dataclass
class _ForwardCache:
    start: int
    inputs: List[np.ndarray]  # inputs[k] feeds layer start + k
    pre_activations: List[np.ndarray]
    latent_layer: Optional[int]
    n_fresh: int


class Network:
    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise InputError("A network needs at least one layer")
        for position, layer in enumerate(layers):
            if layer.index != position:
                raise InputError(f"Layer indices must be contiguous from 0, got {layer.index} at {position}")
            if position and layers[position - 1].out_width != layer.in_width:
                raise DimensionError(
                    f"Layer {position} expects width {layer.in_width}, "
                    f"layer {position - 1} produces {layers[position - 1].out_width}"
                )
        self.layers: List[DenseLayer] = list(layers)
        # Per-parameter learning-rate scale, each entry in [0, 1]
        self.lr_scale: List[LayerParams] = [LayerParams.full_like(layer.params, 1.0) for layer in self.layers]
        self._cache: Optional[_ForwardCache] = None

    @classmethod
    def build(
        cls,
        input_width: int,
        hidden: Sequence[int],
        n_classes: int,
        rng: np.random.Generator,
        head_std: float = 0.005,
    ) -> "Network":
        """Hidden layers draw from N(0, 1/fan_in), the head from N(0, head_std^2)."""
        widths = [input_width, *hidden, n_classes]
        layers = []
        for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            is_head = index == len(widths) - 2
            std = head_std if is_head else 1.0 / np.sqrt(fan_in)
            layers.append(
                DenseLayer(
                    index=index,
                    weight=rng.normal(0.0, std, size=(fan_in, fan_out)),
                    bias=np.zeros(fan_out),
                    activation="identity" if is_head else "relu",
                )
            )
        return cls(layers)

    # --- shape helpers ---
    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def head_index(self) -> int:
        return self.n_layers - 1

    @property
    def head(self) -> DenseLayer:
        return self.layers[-1]

    @property
    def input_width(self) -> int:
        return self.layers[0].in_width

    @property
    def n_classes(self) -> int:
        return self.head.out_width

    def width_at(self, layer: int) -> int:
        """Width of the activation volume consumed by ``layer``."""
        if not 0 <= layer <= self.n_layers:
            raise InputError(f"Layer index {layer} outside [0, {self.n_layers}]")
        return self.input_width if layer == 0 else self.layers[layer - 1].out_width

    def parameters(self) -> List[LayerParams]:
        return [layer.params for layer in self.layers]

    def clone(self) -> "Network":
        twin = copy.deepcopy(self)
        twin._cache = None
        return twin

    def _check_batch(self, batch: np.ndarray, layer: int, what: str) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.width_at(layer):
            raise DimensionError(
                f"{what} of shape {batch.shape} does not match width {self.width_at(layer)} at layer {layer}"
            )
        return batch

    # --- forward ---
    def forward(
        self,
        batch: np.ndarray,
        from_layer: int = 0,
        latent: Optional[np.ndarray] = None,
        latent_layer: Optional[int] = None,
    ) -> np.ndarray:
        """Return logits, caching what ``backward`` needs.

        ``batch`` enters at ``from_layer``; ``latent`` rows, if given, are
        appended after the batch rows when the forward pass reaches
        ``latent_layer``.
        """
        if not 0 <= from_layer <= self.head_index:
            raise InputError(f"from_layer {from_layer} outside [0, {self.head_index}]")
        out = self._check_batch(batch, from_layer, "Batch")
        n_fresh = out.shape[0]
        if latent is not None:
            if latent_layer is None:
                latent_layer = from_layer
            if not from_layer <= latent_layer <= self.head_index:
                raise InputError(f"latent_layer {latent_layer} outside [{from_layer}, {self.head_index}]")
            latent = self._check_batch(latent, latent_layer, "Latent batch")
        else:
            latent_layer = None

        inputs, pre_activations = [], []
        for layer in self.layers[from_layer:]:
            if layer.index == latent_layer:
                out = np.concatenate([out, latent], axis=0)
            z = out @ layer.weight + layer.bias
            inputs.append(out)
            pre_activations.append(z)
            out = layer.activate(z)
        self._cache = _ForwardCache(from_layer, inputs, pre_activations, latent_layer, n_fresh)
        return out

    def activations_at(self, batch: np.ndarray, layer: int, from_layer: int = 0) -> np.ndarray:
        """Partial forward from ``from_layer`` up to the input of ``layer``; no cache."""
        if not from_layer <= layer <= self.n_layers:
            raise InputError(f"Cannot forward from layer {from_layer} to layer {layer}")
        out = self._check_batch(batch, from_layer, "Batch")
        for current in self.layers[from_layer:layer]:
            out = current.activate(out @ current.weight + current.bias)
        return out

    def features(self, batch: np.ndarray) -> np.ndarray:
        return self.activations_at(batch, self.head_index)

    # --- backward ---
    def _propagate(
        self,
        loss_gradient: np.ndarray,
        stop_before_layer: Optional[int] = None,
        rows_to_stop: Optional[np.ndarray] = None,
        down_to: int = 0,
    ) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        """Yield (layer index, layer input, dL/dz) from the head down to the cache start."""
        cache = self._cache
        if cache is None:
            raise StateError("backward called without a preceding forward")
        delta = np.asarray(loss_gradient, dtype=np.float64)
        if delta.shape != cache.pre_activations[-1].shape:
            raise DimensionError(
                f"Loss gradient {delta.shape} does not match logits {cache.pre_activations[-1].shape}"
            )
        mask = None
        if rows_to_stop is not None:
            mask = np.asarray(rows_to_stop, dtype=bool)
            if mask.shape != (delta.shape[0],):
                raise DimensionError(f"Row mask {mask.shape} does not match batch of {delta.shape[0]} rows")

        for offset in range(len(cache.inputs) - 1, -1, -1):
            index = cache.start + offset
            layer = self.layers[index]
            if layer.activation == "relu":
                delta = delta * (cache.pre_activations[offset] > 0.0)
            yield index, cache.inputs[offset], delta
            if offset == 0 or index <= down_to:
                break
            delta = delta @ layer.weight.T
            if cache.latent_layer == index:
                delta = delta[: cache.n_fresh]
                if mask is not None:
                    mask = mask[: cache.n_fresh]
            if mask is not None and stop_before_layer == index:
                delta = delta.copy()
                delta[mask] = 0.0

    def backward(
        self,
        loss_gradient: np.ndarray,
        stop_before_layer: Optional[int] = None,
        rows_to_stop: Optional[np.ndarray] = None,
        down_to: int = 0,
    ) -> List[LayerParams]:
        """Gradients summed over the batch rows for every layer.

        Rows flagged in ``rows_to_stop`` contribute nothing to layers below
        ``stop_before_layer``; rows injected at the latent layer are stopped
        there automatically. Layers under the forward start or below
        ``down_to`` get zeros.
        """
        grads = [LayerParams.zeros_like(layer.params) for layer in self.layers]
        for index, inputs, delta in self._propagate(loss_gradient, stop_before_layer, rows_to_stop, down_to):
            grads[index] = LayerParams(inputs.T @ delta, delta.sum(axis=0))
        return grads

    def sample_gradient_squares(self, batch: np.ndarray, labels: np.ndarray) -> List[LayerParams]:
        """Mean over samples of the squared per-sample cross-entropy gradient."""
        logits = self.forward(batch)
        labels = _check_labels(labels, logits)
        n = logits.shape[0]
        per_sample = softmax(logits, axis=1)
        per_sample[np.arange(n), labels] -= 1.0
        squares = [LayerParams.zeros_like(layer.params) for layer in self.layers]
        for index, inputs, delta in self._propagate(per_sample):
            squares[index] = LayerParams((inputs**2).T @ (delta**2) / n, (delta**2).mean(axis=0))
        return squares

    # --- updates ---
    def sgd_step(self, gradients: Sequence[LayerParams], base_rate: float, layers: Optional[Sequence[int]] = None):
        """theta_k -= base_rate * scale_k * grad_k on the selected layers (all by default)."""
        if base_rate <= 0:
            raise InputError(f"base_rate must be positive, got {base_rate}")
        selected = range(self.n_layers) if layers is None else layers
        for index in selected:
            grad = gradients[index]
            check_finite(grad, index)
            scale = self.lr_scale[index]
            for (name, param), (_, g), (_, s) in zip(self.layers[index].params.items(), grad.items(), scale.items()):
                if g.shape != param.shape:
                    raise DimensionError(f"Layer {index} {name}: gradient {g.shape} vs parameter {param.shape}")
                param -= base_rate * (s * g)
        return self

    def set_lr_scale(self, index: int, scale: LayerParams):
        for _, values in scale.items():
            if values.size and (values.min() < 0.0 or values.max() > 1.0):
                raise InputError(f"Learning-rate scale of layer {index} leaves [0, 1]")
        self.lr_scale[index] = scale.copy()


def check_finite(grad: LayerParams, index: int):
    for name, values in grad.items():
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            raise NumericError(f"Non-finite gradient at layer {index} {name}{tuple(int(i) for i in bad[0])}")


def _check_labels(labels: np.ndarray, logits: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    n_rows, n_classes = logits.shape
    if labels.shape != (n_rows,):
        raise DimensionError(f"Expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"Labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient (softmax - onehot) / batch_size."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(-log_softmax(logits, axis=1)[rows, labels].mean())
    gradient = softmax(logits, axis=1)
    gradient[rows, labels] -= 1.0
    return loss, gradient / n


def per_sample_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits)
    return -log_softmax(logits, axis=1)[np.arange(logits.shape[0]), labels]


def _relu_pattern(net: Network, batch: np.ndarray) -> List[np.ndarray]:
    out, pattern = batch, []
    for layer in net.layers:
        z = out @ layer.weight + layer.bias
        if layer.activation == "relu":
            pattern.append(z > 0.0)
        out = layer.activate(z)
    return pattern


def finite_difference_check(
    net: Network,
    batch: np.ndarray,
    labels: np.ndarray,
    epsilon: float = 1e-5,
    n_samples: int = 40,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Parameters whose perturbation flips a ReLU gate are skipped, the kink
    makes the central difference meaningless there.
    """
    if not 0 < epsilon <= 1e-2:
        raise InputError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    rng = rng or np.random.default_rng(0)
    batch = np.asarray(batch, dtype=np.float64)

    _, loss_gradient = cross_entropy(net.forward(batch), labels)
    analytic = net.backward(loss_gradient)

    locations = [
        (index, name, flat)
        for index, layer in enumerate(net.layers)
        for name, param in layer.params.items()
        for flat in range(param.size)
    ]
    picks = rng.choice(len(locations), size=min(n_samples, len(locations)), replace=False)
    base_pattern = _relu_pattern(net, batch)

    worst, skipped = 0.0, 0
    for pick in picks:
        index, name, flat = locations[pick]
        param = getattr(net.layers[index], name).reshape(-1)
        original = param[flat]

        param[flat] = original + epsilon
        plus = cross_entropy(net.activations_at(batch, net.n_layers), labels)[0]
        plus_pattern = _relu_pattern(net, batch)
        param[flat] = original - epsilon
        minus = cross_entropy(net.activations_at(batch, net.n_layers), labels)[0]
        minus_pattern = _relu_pattern(net, batch)
        param[flat] = original

        gates_moved = any(
            not (np.array_equal(b, p) and np.array_equal(b, m))
            for b, p, m in zip(base_pattern, plus_pattern, minus_pattern)
        )
        if gates_moved:
            skipped += 1
            continue
        central = (plus - minus) / (2.0 * epsilon)
        exact = getattr(analytic[index], name).reshape(-1)[flat]
        worst = max(worst, abs(exact - central) / (abs(exact) + abs(central) + 1e-12))

    if skipped:
        logger.debug("finite_difference_check skipped %d parameters sitting on a ReLU kink", skipped)
    return worst
