from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BBox2D,
    Box3D,
    CameraIntrinsics,
    CameraPose,
    CenterProjection,
    lift_image_to_world,
    obs_to_global_yaw,
    wrap_angle,
)


@dataclass
class ObjectState:
    """World-frame object state: position, yaw, dimensions, appearance, velocity.

    ``velocity`` is in meters per frame.
    """

    position: np.ndarray
    yaw: float
    dimensions: np.ndarray
    embedding: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.dimensions = np.asarray(self.dimensions, dtype=float).reshape(3)
        self.embedding = np.asarray(self.embedding, dtype=float).reshape(-1)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.yaw = wrap_angle(self.yaw)
        if np.any(self.dimensions <= 0):
            raise ValueError("dimensions must be positive")

    def as_vector7(self) -> np.ndarray:
        """The motion-model view ``[x, y, z, yaw, l, w, h]``."""
        return np.concatenate([self.position, [self.yaw], self.dimensions])

    def box(self) -> Box3D:
        return Box3D(self.position, self.yaw, self.dimensions)

    def with_vector7(self, vec) -> "ObjectState":
        vec = np.asarray(vec, dtype=float)
        return ObjectState(
            vec[:3].copy(),
            float(vec[3]),
            np.maximum(vec[4:7], 1e-3),
            self.embedding.copy(),
            self.velocity.copy(),
        )


@dataclass
class Detection:
    """One frame's detector output for a single object candidate."""

    bbox2d: BBox2D
    center_proj: CenterProjection
    depth_confidence: float
    yaw_obs: float
    dimensions: np.ndarray
    embedding: np.ndarray
    camera_id: int = 0
    class_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.depth_confidence <= 1.0:
            raise ValueError("depth_confidence must lie in [0, 1]")
        self.dimensions = np.asarray(self.dimensions, dtype=float).reshape(3)
        self.embedding = np.asarray(self.embedding, dtype=float).reshape(-1)

    @property
    def score_3d(self) -> float:
        return self.bbox2d.score * self.depth_confidence


def lift_detection(det: Detection, intrinsics: CameraIntrinsics, pose: CameraPose) -> ObjectState:
    """World-frame state of a detection (zero velocity)."""
    position = lift_image_to_world(det.center_proj, intrinsics, pose)
    yaw = obs_to_global_yaw(det.yaw_obs, det.center_proj.pixel[0], intrinsics, pose.heading)
    return ObjectState(position, yaw, det.dimensions, det.embedding)
