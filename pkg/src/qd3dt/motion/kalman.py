"""Constant-velocity Kalman filter over [x, y, z, yaw, l, w, h, dx, dy, dz]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import wrap_angle

STATE_DIM = 10
OBS_DIM = 7
YAW = 3


class SingularInnovation(np.linalg.LinAlgError):
    pass


@dataclass
class KalmanNoise:
    """Diagonal noise settings (position, yaw, dims, velocity variances)."""

    position: float
    yaw: float
    dims: float
    velocity: float = 0.0

    def process_matrix(self) -> np.ndarray:
        return np.diag([self.position] * 3 + [self.yaw] + [self.dims] * 3 + [self.velocity] * 3)

    def observation_matrix(self) -> np.ndarray:
        return np.diag([self.position] * 3 + [self.yaw] + [self.dims] * 3)


DEFAULT_PROCESS_NOISE = KalmanNoise(position=0.01, yaw=0.01, dims=1e-4, velocity=0.01)
DEFAULT_OBS_NOISE = KalmanNoise(position=1.0, yaw=0.1, dims=0.01)
INITIAL_VELOCITY_VAR = 10.0

TRANSITION = np.eye(STATE_DIM)
TRANSITION[0:3, 7:10] = np.eye(3)
OBSERVATION = np.eye(OBS_DIM, STATE_DIM)


@dataclass
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(STATE_DIM, STATE_DIM)

    @classmethod
    def from_observation(cls, obs, obs_noise: KalmanNoise = DEFAULT_OBS_NOISE,
                         velocity_var: float = INITIAL_VELOCITY_VAR) -> "KalmanState":
        mean = np.zeros(STATE_DIM)
        mean[:OBS_DIM] = obs
        mean[YAW] = wrap_angle(mean[YAW])
        cov = np.zeros((STATE_DIM, STATE_DIM))
        cov[:OBS_DIM, :OBS_DIM] = obs_noise.observation_matrix()
        cov[7:, 7:] = velocity_var * np.eye(3)
        return cls(mean, cov)


def _as_matrix(noise, dim: int, kind: str) -> np.ndarray:
    if isinstance(noise, KalmanNoise):
        return noise.process_matrix() if kind == "process" else noise.observation_matrix()
    noise = np.asarray(noise, dtype=float)
    return np.diag(np.full(dim, float(noise))) if noise.ndim == 0 else noise


def _symmetrize(P):
    return 0.5 * (P + P.T)


def kf3d_predict(state: KalmanState, process_noise=DEFAULT_PROCESS_NOISE) -> KalmanState:
    Q = _as_matrix(process_noise, STATE_DIM, "process")
    mean = TRANSITION @ state.mean
    mean[YAW] = wrap_angle(mean[YAW])
    cov = _symmetrize(TRANSITION @ state.covariance @ TRANSITION.T + Q)
    return KalmanState(mean, cov)


def kf3d_update(state: KalmanState, obs, obs_noise=DEFAULT_OBS_NOISE, confidence: float = 1.0) -> KalmanState:
    """Kalman correction with the yaw innovation wrapped to (-pi, pi].

    ``confidence`` in (0, 1] inflates the observation noise by ``1 / confidence``.
    """
    R = _as_matrix(obs_noise, OBS_DIM, "obs") / max(confidence, 1e-3)
    H = OBSERVATION
    innovation = np.asarray(obs, dtype=float) - H @ state.mean
    innovation[YAW] = wrap_angle(innovation[YAW])
    S = H @ state.covariance @ H.T + R
    try:
        K = np.linalg.solve(S, H @ state.covariance).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc
    if not np.all(np.isfinite(K)):
        raise SingularInnovation("non-finite Kalman gain")
    mean = state.mean + K @ innovation
    mean[YAW] = wrap_angle(mean[YAW])
    # Joseph form keeps the covariance positive-definite
    I_KH = np.eye(STATE_DIM) - K @ H
    cov = _symmetrize(I_KH @ state.covariance @ I_KH.T + K @ R @ K.T)
    return KalmanState(mean, cov)
