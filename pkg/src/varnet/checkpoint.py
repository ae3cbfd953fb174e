"""
Versioned JSON checkpoints for NoisyMLP models

The document holds the format version, the task, layer shapes, weight rows,
running BN statistics, every rho, the head, the training config and the master
seed. Keys are sorted and floats are written with full precision, so saving
the same model twice gives identical bytes.
"""

import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from src.sphere.klvar import Parameterization
from src.utils.errors import CheckpointError, ConfigError
from src.utils.io import read_json, write_json
from src.varnet.layers import BatchNormState, EffNoiseParam, NoisyNormLayer
from src.varnet.model import NoisyMLP, Task
from src.varnet.training import TrainConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sphevar-checkpoint"
CHECKPOINT_VERSION = 1


def model_state(model: NoisyMLP) -> dict:
    layers = []
    for layer in model.layers:
        layers.append({
            "in_dim": layer.in_dim,
            "out_dim": layer.out_dim,
            "weights": layer.weights.tolist(),
            "rho": float(layer.noise.rho),
            "parameterization": layer.noise.parameterization.value,
            "frozen": layer.noise.frozen,
            "bn": {
                "running_mean": layer.bn_state.running_mean.tolist(),
                "running_var": layer.bn_state.running_var.tolist(),
                "momentum": layer.bn_state.momentum,
                "epsilon": layer.bn_state.epsilon,
            },
        })
    return {
        "task": model.task.value,
        "layers": layers,
        "head": {"weights": model.head_weights.tolist(), "bias": model.head_bias.tolist()},
        "log_var": float(model.log_var),
    }


def save_checkpoint(path: Path, model: NoisyMLP, config: Optional[TrainConfig] = None,
                    seed: Optional[int] = None) -> Path:
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "train_config": config.to_dict() if config is not None else None,
        "model": model_state(model),
    }
    path = write_json(Path(path), document)
    logger.info(f"Checkpoint saved: {path}")
    return path


def _matrix(values, shape, what: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.shape != tuple(shape):
        raise CheckpointError(f"{what} has shape {array.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(array)):
        raise CheckpointError(f"{what} holds non-finite values")
    return array


def model_from_state(state: dict) -> NoisyMLP:
    try:
        layers = []
        for i, entry in enumerate(state["layers"]):
            shape = (entry["out_dim"], entry["in_dim"])
            weights = _matrix(entry["weights"], shape, f"layer {i} weights")
            noise = EffNoiseParam(entry["rho"], shape[0], shape[1],
                                  Parameterization(entry["parameterization"]), entry["frozen"])
            bn = entry["bn"]
            bn_state = BatchNormState(
                _matrix(bn["running_mean"], (shape[0],), f"layer {i} running mean"),
                _matrix(bn["running_var"], (shape[0],), f"layer {i} running variance"),
                float(bn["momentum"]),
                float(bn["epsilon"]),
            )
            layers.append(NoisyNormLayer(weights, noise, bn_state))
        if not layers:
            raise CheckpointError("checkpoint holds no layers")
        head = state["head"]
        head_weights = np.asarray(head["weights"], dtype=float)
        head_bias = np.asarray(head["bias"], dtype=float)
        if head_weights.ndim != 2 or head_bias.shape != (head_weights.shape[0],):
            raise CheckpointError("head weights and bias do not agree")
        return NoisyMLP(layers, head_weights, head_bias, Task(state["task"]), state.get("log_var", 0.0))
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e


def load_checkpoint(path: Path) -> Tuple[NoisyMLP, Optional[TrainConfig], Optional[int]]:
    """(model, training config, seed); raises CheckpointError on any mismatch"""
    try:
        document = read_json(Path(path))
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a sphevar checkpoint")
    version = document.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version!r} is not supported (expected {CHECKPOINT_VERSION})")

    model = model_from_state(document["model"])
    config = None
    if document.get("train_config") is not None:
        try:
            config = TrainConfig.from_dict(document["train_config"])
        except ConfigError as e:
            raise CheckpointError(f"checkpoint training config is invalid: {e}") from e
    return model, config, document.get("seed")
