"""Per-track motion model wrappers used by the tracker.

Every model follows the same cycle each frame: ``predict()`` once, then
either ``update(obs, confidence)`` when matched or ``coast()`` when not.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from ..geometry import wrap_angle
from . import velolstm
from .kalman import DEFAULT_OBS_NOISE, DEFAULT_PROCESS_NOISE, KalmanState, kf3d_predict, kf3d_update
from .momentum import momentum_update

MOTION_MODELS = ("kf3d", "momentum", "velolstm", "none")


def _wrapped(vec):
    vec = np.array(vec, dtype=float, copy=True)
    vec[3] = wrap_angle(vec[3])
    return vec


class MotionModel:
    name = "abstract"

    def __init__(self, obs, confidence: float = 1.0):
        self.refined = _wrapped(obs)
        self.predicted = self.refined.copy()

    def predict(self) -> np.ndarray:
        raise NotImplementedError

    def update(self, obs, confidence: float = 1.0) -> np.ndarray:
        raise NotImplementedError

    def coast(self) -> np.ndarray:
        self.refined = self.predicted.copy()
        return self.refined

    @property
    def velocity(self) -> np.ndarray:
        return np.zeros(3)


class NoMotion(MotionModel):
    """Raw detections: refined state is the observation, prediction is zero motion."""

    name = "none"

    def predict(self):
        self.predicted = self.refined.copy()
        return self.predicted

    def update(self, obs, confidence=1.0):
        self.refined = _wrapped(obs)
        return self.refined


class MomentumMotion(MotionModel):
    name = "momentum"

    def __init__(self, obs, confidence=1.0, momentum: float = 0.5):
        super().__init__(obs, confidence)
        self.momentum = momentum

    def predict(self):
        self.predicted = self.refined.copy()
        return self.predicted

    def update(self, obs, confidence=1.0):
        self.refined = momentum_update(self.refined, obs, self.momentum)
        return self.refined


class KalmanMotion(MotionModel):
    name = "kf3d"

    def __init__(self, obs, confidence=1.0, process_noise=DEFAULT_PROCESS_NOISE, obs_noise=DEFAULT_OBS_NOISE,
                 use_confidence: bool = True):
        super().__init__(obs, confidence)
        self.process_noise = process_noise
        self.obs_noise = obs_noise
        self.use_confidence = use_confidence
        self.state = KalmanState.from_observation(self.refined, obs_noise)

    def predict(self):
        self.state = kf3d_predict(self.state, self.process_noise)
        self.predicted = self.state.mean[:7].copy()
        return self.predicted

    def update(self, obs, confidence=1.0):
        conf = confidence if self.use_confidence else 1.0
        self.state = kf3d_update(self.state, obs, self.obs_noise, conf)
        self.refined = self.state.mean[:7].copy()
        return self.refined

    def coast(self):
        self.refined = self.state.mean[:7].copy()
        return self.refined

    @property
    def velocity(self):
        return self.state.mean[7:10].copy()


class VeloLSTMMotion(MotionModel):
    name = "velolstm"

    def __init__(self, obs, confidence=1.0, params=None, use_confidence: bool = True):
        super().__init__(obs, confidence)
        if params is None:
            raise ValueError("VeloLSTMMotion needs trained parameters")
        self.params = params
        shp = velolstm.shape_of(params)
        self.history = deque(maxlen=shp.history)
        self.p_hidden = velolstm.zero_state(1, shp.hidden)
        self.u_hidden = velolstm.zero_state(1, shp.hidden)
        self.use_confidence = use_confidence
        self._last_velocity = np.zeros(7)

    def predict(self):
        hist = np.array(self.history) if self.history else np.zeros((0, 7))
        self.predicted, self._last_velocity, self.p_hidden = velolstm.velolstm_predict(
            self.params, self.refined, hist, self.p_hidden
        )
        return self.predicted

    def update(self, obs, confidence=1.0):
        conf = confidence if self.use_confidence else 1.0
        prev = self.refined
        self.refined, vel, self.u_hidden = velolstm.velolstm_update(
            self.params, obs, conf, self.predicted, prev, self.u_hidden
        )
        self.history.append(vel)
        self.refined[4:7] = np.maximum(self.refined[4:7], 1e-3)
        return self.refined

    @property
    def velocity(self):
        if self.history:
            return np.asarray(self.history[-1][:3])
        return self._last_velocity[:3].copy()


def make_motion_factory(name: str, params=None, momentum: float = 0.5, use_confidence: bool = True):
    """Return a callable ``(obs, confidence) -> MotionModel``."""
    if name == "kf3d":
        return lambda obs, conf=1.0: KalmanMotion(obs, conf, use_confidence=use_confidence)
    if name == "momentum":
        return lambda obs, conf=1.0: MomentumMotion(obs, conf, momentum=momentum)
    if name == "velolstm":
        if params is None:
            raise ValueError("velolstm motion requires model parameters")
        return lambda obs, conf=1.0: VeloLSTMMotion(obs, conf, params=params, use_confidence=use_confidence)
    if name == "none":
        return lambda obs, conf=1.0: NoMotion(obs, conf)
    raise ValueError(f"unknown motion model {name!r}")
