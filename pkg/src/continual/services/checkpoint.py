"""Versioned .npz checkpoints.

Network archive layout (all arrays float64 unless noted):

    format_version          int, currently 1
    n_layers                int
    layer_{i}_weight        (in_width, out_width)
    layer_{i}_bias          (out_width,)
    layer_{i}_activation    str, "relu" | "identity"

A learner snapshot stores the network fields plus:

    head_cw_weight, head_cw_bias, head_tw_weight, head_tw_bias
    head_past               int64 (n_classes,)
    fisher_{i}_weight, fisher_{i}_bias        unclipped Fisher mean per class-shared layer i
    theta_star_{i}_weight, theta_star_{i}_bias  only when a snapshot exists
    fisher_updates          int
    experiences_seen        int
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict

import numpy as np

from ..exceptions import StateError
from .network import DenseLayer, LayerParams, Network
from .strategy import ContinualLearner

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def _network_arrays(net: Network) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
        "n_layers": np.array(net.n_layers),
    }
    for layer in net.layers:
        arrays[f"layer_{layer.index}_weight"] = layer.weight
        arrays[f"layer_{layer.index}_bias"] = layer.bias
        arrays[f"layer_{layer.index}_activation"] = np.array(layer.activation)
    return arrays


def _network_from(archive) -> Network:
    version = int(archive["format_version"])
    if version != CHECKPOINT_FORMAT_VERSION:
        raise StateError(f"Unsupported checkpoint version {version}")
    layers = [
        DenseLayer(
            index=i,
            weight=archive[f"layer_{i}_weight"],
            bias=archive[f"layer_{i}_bias"],
            activation=str(archive[f"layer_{i}_activation"]),
        )
        for i in range(int(archive["n_layers"]))
    ]
    return Network(layers)


def save_network(net: Network, path: Path):
    np.savez(path, **_network_arrays(net))
    logger.info("Network checkpoint saved to %s", path)


def load_network(path: Path) -> Network:
    if not Path(path).exists():
        raise FileNotFoundError(f"Checkpoint not found at {path}")
    with np.load(path) as archive:
        return _network_from(archive)


def save_learner(learner: ContinualLearner, path: Path):
    arrays = _network_arrays(learner.net)
    head = learner.head
    arrays.update(
        head_cw_weight=head.cw.weight,
        head_cw_bias=head.cw.bias,
        head_tw_weight=head.tw.weight,
        head_tw_bias=head.tw.bias,
        head_past=head.past,
        fisher_updates=np.array(learner.fisher.updates),
        experiences_seen=np.array(learner.experiences_seen),
    )
    for i, f in enumerate(learner.fisher.mean):
        arrays[f"fisher_{i}_weight"] = f.weight
        arrays[f"fisher_{i}_bias"] = f.bias
    for i, anchor in enumerate(learner.fisher.theta_star or []):
        arrays[f"theta_star_{i}_weight"] = anchor.weight
        arrays[f"theta_star_{i}_bias"] = anchor.bias
    np.savez(path, **arrays)
    logger.info("Learner snapshot saved to %s", path)


def restore_learner(learner: ContinualLearner, path: Path) -> ContinualLearner:
    """Load a snapshot into a learner built with the same config; the replay memory is not part of it."""
    with np.load(path) as archive:
        learner.net = _network_from(archive)
        head = learner.head
        head.cw = LayerParams(archive["head_cw_weight"], archive["head_cw_bias"])
        head.tw = LayerParams(archive["head_tw_weight"], archive["head_tw_bias"])
        head.past = archive["head_past"].astype(np.int64)
        n_shared = learner.net.n_layers - 1
        learner.fisher.mean = [
            LayerParams(archive[f"fisher_{i}_weight"], archive[f"fisher_{i}_bias"]) for i in range(n_shared)
        ]
        if "theta_star_0_weight" in archive.files:
            learner.fisher.theta_star = [
                LayerParams(archive[f"theta_star_{i}_weight"], archive[f"theta_star_{i}_bias"])
                for i in range(n_shared)
            ]
        learner.fisher.updates = int(archive["fisher_updates"])
        learner.experiences_seen = int(archive["experiences_seen"])
    return learner
