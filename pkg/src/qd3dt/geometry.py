"""Camera model, coordinate transforms and 3D box geometry.

Conventions used throughout the package:

* World frame is right-handed and z-up. Yaw is a rotation about +z measured
  counter-clockwise from +x, normalized to (-pi, pi].
* Camera frame is the usual optical frame: x right, y down, z forward.
* A :class:`CameraPose` is the extrinsic ``[R|t]`` mapping world points into
  the camera frame, ``p_cam = R @ p_world + t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


class PointBehindCamera(GeometryError):
    pass


class FullyBehindCamera(GeometryError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class OutOfRangeEncoding(GeometryError):
    pass


# Scale applied to log10(depth) in the scaled-log encoding.
LOG_DEPTH_SCALE = 2.0
DEPTH_CONFIDENCE_SCALE = 10.0
ORIENTATION_BIN_CENTERS = (0.0, math.pi)


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_length_px: float
    principal_point: tuple[float, float]
    image_size: tuple[float, float]

    def __post_init__(self):
        if not self.focal_length_px > 0:
            raise GeometryError("focal length must be positive")
        if min(self.image_size) <= 0:
            raise GeometryError("image size must be positive")

    @property
    def matrix(self) -> np.ndarray:
        f = self.focal_length_px
        cx, cy = self.principal_point
        return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    @classmethod
    def centered(cls, focal_length_px: float, width: float, height: float) -> "CameraIntrinsics":
        return cls(focal_length_px, (width / 2.0, height / 2.0), (width, height))


@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def looking_along(cls, position, heading: float) -> "CameraPose":
        """Forward-looking camera at ``position`` whose optical axis points along ``heading``."""
        c, s = math.cos(heading), math.sin(heading)
        forward = np.array([c, s, 0.0])
        right = np.array([s, -c, 0.0])
        down = np.array([0.0, 0.0, -1.0])
        R = np.stack([right, down, forward])
        return cls(R, -R @ np.asarray(position, dtype=float))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def heading(self) -> float:
        """World yaw of the optical axis projected on the ground plane."""
        forward = self.rotation[2]
        return math.atan2(forward[1], forward[0])

    def matrix4(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


@dataclass(frozen=True)
class BBox2D:
    u_min: float
    v_min: float
    u_max: float
    v_max: float
    score: float = 1.0
    truncation: float = 0.0

    def __post_init__(self):
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise GeometryError("degenerate 2D box: min exceeds max")

    @property
    def area(self) -> float:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)

    def as_array(self) -> np.ndarray:
        return np.array([self.u_min, self.v_min, self.u_max, self.v_max])


@dataclass(frozen=True, eq=False)
class Box3D:
    center_world: np.ndarray
    orientation_yaw: float
    dimensions: np.ndarray  # (l, w, h)

    def __post_init__(self):
        center = np.asarray(self.center_world, dtype=float).reshape(3)
        dims = np.asarray(self.dimensions, dtype=float).reshape(3)
        if np.any(dims <= 0):
            raise GeometryError("box dimensions must be positive")
        object.__setattr__(self, "center_world", center)
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "orientation_yaw", wrap_angle(self.orientation_yaw))

    def __eq__(self, other):
        if not isinstance(other, Box3D):
            return NotImplemented
        return (
            np.array_equal(self.center_world, other.center_world)
            and self.orientation_yaw == other.orientation_yaw
            and np.array_equal(self.dimensions, other.dimensions)
        )


@dataclass(frozen=True)
class CenterProjection:
    pixel: tuple[float, float]
    depth: float

    def __post_init__(self):
        if not self.depth > 0:
            raise NonPositiveDepth(f"depth must be positive, got {self.depth}")


def world_to_camera(point, pose: CameraPose) -> np.ndarray:
    return pose.rotation @ np.asarray(point, dtype=float) + pose.translation


def project_world_to_image(point, intrinsics: CameraIntrinsics, pose: CameraPose) -> CenterProjection:
    x, y, z = world_to_camera(point, pose)
    if z <= 0:
        raise PointBehindCamera(f"camera-frame depth {z:.6g} is not positive")
    f = intrinsics.focal_length_px
    cx, cy = intrinsics.principal_point
    return CenterProjection((f * x / z + cx, f * y / z + cy), float(z))


def lift_image_to_world(proj: CenterProjection, intrinsics: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Back-project a pixel with known depth into world coordinates."""
    f = intrinsics.focal_length_px
    cx, cy = intrinsics.principal_point
    u, v = proj.pixel
    d = proj.depth
    p_cam = np.array([(u - cx) * d / f, (v - cy) * d / f, d])
    return pose.rotation.T @ (p_cam - pose.translation)


def encode_depth(d: float, mode: str = "scaled_log") -> float:
    if not d > 0:
        raise NonPositiveDepth(f"depth must be positive, got {d}")
    if mode == "scaled_log":
        return LOG_DEPTH_SCALE * math.log10(d)
    if mode == "inverse":
        return 1.0 - 1.0 / d
    raise ValueError(f"unknown depth encoding {mode!r}")


def decode_depth(e: float, mode: str = "scaled_log") -> float:
    if mode == "scaled_log":
        return 10.0 ** (e / LOG_DEPTH_SCALE)
    if mode == "inverse":
        if not e < 1.0:
            raise OutOfRangeEncoding(f"inverse encoding must be < 1, got {e}")
        return 1.0 / (1.0 - e)
    raise ValueError(f"unknown depth encoding {mode!r}")


def depth_confidence(d_hat: float, d_gt: float, scale_r: float = DEPTH_CONFIDENCE_SCALE) -> float:
    return math.exp(-abs(d_hat - d_gt) / scale_r)


def _ray_angle(u_c: float, intrinsics: CameraIntrinsics) -> float:
    u_hat = u_c - intrinsics.image_size[0] / 2.0
    return math.atan(u_hat / intrinsics.focal_length_px)


def obs_to_global_yaw(theta_obs: float, u_c: float, intrinsics: CameraIntrinsics, ego_heading: float) -> float:
    """Convert an observation angle into world yaw.

    The camera-relative rotation is ``theta_obs + arctan(u_hat / f)`` with
    ``u_hat`` the horizontal offset from the image center; the ego heading
    is then added to reach the world frame.
    """
    theta_cam = math.fmod(theta_obs + _ray_angle(u_c, intrinsics), 2.0 * math.pi)
    return wrap_angle(theta_cam + ego_heading)


def global_to_obs_yaw(yaw: float, u_c: float, intrinsics: CameraIntrinsics, ego_heading: float) -> float:
    return wrap_angle(yaw - ego_heading - _ray_angle(u_c, intrinsics))


def encode_orientation_bin(theta: float) -> tuple[int, float]:
    """Two-bin classification with residual regression targets.

    Bins are centered at 0 and pi; the residual is wrapped relative to the
    chosen center.
    """
    theta = wrap_angle(theta)
    residuals = [wrap_angle(theta - c) for c in ORIENTATION_BIN_CENTERS]
    b = int(abs(residuals[1]) < abs(residuals[0]))
    return b, residuals[b]


def decode_orientation_bin(bin_index: int, residual: float) -> float:
    return wrap_angle(ORIENTATION_BIN_CENTERS[bin_index] + residual)


# Corner sign pattern: columns are corners, rows are (l, w, h) half-extents.
_CORNER_SIGNS = np.array(
    [
        [1, 1, -1, -1, 1, 1, -1, -1],
        [1, -1, -1, 1, 1, -1, -1, 1],
        [1, 1, 1, 1, -1, -1, -1, -1],
    ],
    dtype=float,
)

# Index pairs of the 12 cuboid edges in the corner ordering above.
BOX_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box3d_corners(box: Box3D) -> np.ndarray:
    """Return the 3x8 corner matrix of a yaw-rotated cuboid."""
    local = 0.5 * box.dimensions[:, None] * _CORNER_SIGNS
    return yaw_matrix(box.orientation_yaw) @ local + box.center_world[:, None]


def enclose_2d(
    corners: np.ndarray,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    image_size: tuple[float, float] | None = None,
    near: float = 1e-3,
    score: float = 1.0,
) -> BBox2D:
    """Axis-aligned image box around projected corners, clipped to the image.

    Edges crossing the near plane are cut at ``z = near`` so partially
    visible boxes still enclose their visible part. ``truncation`` on the
    result is the fraction of the unclipped box area that falls outside
    the image.
    """
    if image_size is None:
        image_size = intrinsics.image_size
    cam = pose.rotation @ corners + pose.translation[:, None]
    front = cam[2] > near
    if not front.any():
        raise FullyBehindCamera("no corner lies in front of the camera")
    pts = [cam[:, i] for i in range(8) if front[i]]
    for i, j in BOX_EDGES:
        if front[i] != front[j]:
            a, b = cam[:, i], cam[:, j]
            s = (near - a[2]) / (b[2] - a[2])
            pts.append(a + s * (b - a))
    pts = np.stack(pts, axis=1)
    f = intrinsics.focal_length_px
    cx, cy = intrinsics.principal_point
    u = f * pts[0] / pts[2] + cx
    v = f * pts[1] / pts[2] + cy
    raw = (u.min(), v.min(), u.max(), v.max())
    w_img, h_img = image_size
    clipped = (
        min(max(raw[0], 0.0), w_img),
        min(max(raw[1], 0.0), h_img),
        min(max(raw[2], 0.0), w_img),
        min(max(raw[3], 0.0), h_img),
    )
    raw_area = (raw[2] - raw[0]) * (raw[3] - raw[1])
    clipped_area = (clipped[2] - clipped[0]) * (clipped[3] - clipped[1])
    truncation = 1.0 - clipped_area / raw_area if raw_area > 0 else 0.0
    return BBox2D(*clipped, score=score, truncation=float(truncation))


def iou_2d(a: BBox2D, b: BBox2D) -> float:
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return float(inter / union) if union > 0 else 0.0


def iou_3d_aligned(a: Box3D, b: Box3D) -> float:
    """IoU after moving ``b`` onto ``a``'s centroid and heading.

    Dimensions are compared axis by axis (l with l, w with w, h with h).
    """
    inter = float(np.prod(np.minimum(a.dimensions, b.dimensions)))
    union = float(np.prod(a.dimensions) + np.prod(b.dimensions)) - inter
    return inter / union


def _footprint(box: Box3D):
    from shapely.geometry import Polygon

    c = box3d_corners(box)
    return Polygon(c[:2, :4].T)


def iou_bev(a: Box3D, b: Box3D) -> float:
    """IoU of the rotated ground-plane footprints."""
    fa, fb = _footprint(a), _footprint(b)
    inter = fa.intersection(fb).area
    union = fa.area + fb.area - inter
    return float(inter / union) if union > 0 else 0.0


def iou_3d(a: Box3D, b: Box3D) -> float:
    """IoU of two yaw-rotated cuboids (footprint polygon overlap times height overlap)."""
    inter_area = _footprint(a).intersection(_footprint(b)).area
    za = (a.center_world[2] - a.dimensions[2] / 2, a.center_world[2] + a.dimensions[2] / 2)
    zb = (b.center_world[2] - b.dimensions[2] / 2, b.center_world[2] + b.dimensions[2] / 2)
    dz = max(0.0, min(za[1], zb[1]) - max(za[0], zb[0]))
    inter = inter_area * dz
    union = float(np.prod(a.dimensions) + np.prod(b.dimensions)) - inter
    return float(inter / union) if union > 0 else 0.0
