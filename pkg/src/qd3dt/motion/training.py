from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .velolstm import LossWeights, forward_sequence, loss_and_grad, motion_losses

log = logging.getLogger(__name__)


class DivergedTraining(RuntimeError):
    pass


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    clip_norm: float = 5.0
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    dt: float = 1.0
    weights: LossWeights = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = LossWeights()


@dataclass
class TrajectoryDataset:
    observations: np.ndarray  # (N, T, 7)
    confidences: np.ndarray  # (N, T)
    ground_truth: np.ndarray  # (N, T, 7)
    speeds: np.ndarray | None = None  # (N, T) m/s, informational

    def __len__(self):
        return len(self.observations)

    def subset(self, index) -> "TrajectoryDataset":
        speeds = None if self.speeds is None else self.speeds[index]
        return TrajectoryDataset(self.observations[index], self.confidences[index], self.ground_truth[index], speeds)


def evaluate(params, data: TrajectoryDataset, config: OptimizerConfig):
    predicted, refined, _ = forward_sequence(params, data.observations, data.confidences)
    return motion_losses(predicted, refined, data.ground_truth, config.dt, config.weights)


def train_velolstm(params: dict, data: TrajectoryDataset, config: OptimizerConfig = OptimizerConfig()):
    """Mini-batch gradient descent with momentum and global-norm clipping.

    Returns ``(trained_params, loss_curve)`` where ``loss_curve[0]`` is the
    full-dataset loss before training and ``loss_curve[e]`` after epoch ``e``.
    """
    params = {k: v.copy() for k, v in params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(config.seed)
    curve = [evaluate(params, data, config)[0]]
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = data.subset(order[start:start + config.batch_size])
            loss, _, grads = loss_and_grad(params, batch.observations, batch.confidences,
                                           batch.ground_truth, config.dt, config.weights)
            if not np.isfinite(loss):
                raise DivergedTraining(f"non-finite loss at epoch {epoch}")
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = min(1.0, config.clip_norm / norm) if norm > 0 else 1.0
            for k in params:
                velocity[k] = config.momentum * velocity[k] - config.learning_rate * scale * grads[k]
                params[k] += velocity[k]
        loss = evaluate(params, data, config)[0]
        if not np.isfinite(loss):
            raise DivergedTraining(f"non-finite loss after epoch {epoch}")
        curve.append(loss)
        log.debug("epoch %d loss %.6f", epoch, loss)
    return params, curve
