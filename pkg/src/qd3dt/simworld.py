"""Deterministic synthetic driving world.

Generates ego poses and ground-truth object trajectories in the world
frame, then renders noisy per-camera detections from them. All randomness
comes from keyed :class:`~qd3dt.rng.Xoshiro256` streams, one per
(purpose, frame, camera, object), so any single value can be regenerated in
isolation and outputs are identical across platforms.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (
    DEPTH_CONFIDENCE_SCALE,
    BBox2D,
    Box3D,
    CameraIntrinsics,
    CameraPose,
    CenterProjection,
    FullyBehindCamera,
    box3d_corners,
    enclose_2d,
    global_to_obs_yaw,
    lift_image_to_world,
    obs_to_global_yaw,
    project_world_to_image,
    wrap_angle,
)
from .motion.training import TrajectoryDataset
from .rng import Xoshiro256
from .state import Detection

# stream purpose labels
_OBJECTS, _EMBED, _DETECT, _FALSE_POS, _CROSSING = 1, 2, 3, 4, 5

PROFILES = ("constant_velocity", "turning", "stop_and_go")
EGO_PROFILES = ("static", "straight", "turning")
CLASS_DIMS = {0: (4.5, 1.8, 1.5), 1: (0.8, 0.6, 1.75), 2: (1.8, 0.6, 1.6)}
CAMERA_HEIGHT = 1.5


class InvalidScript(ValueError):
    pass


@dataclass
class NoiseConfig:
    center_px_sigma: float = 0.0
    depth_rel_sigma: float = 0.0
    yaw_sigma: float = 0.0
    dim_rel_sigma: float = 0.0
    embedding_noise_sigma: float = 0.0
    false_positive_rate: float = 0.0
    drop_rate: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.false_positive_rate > 1 or self.drop_rate > 1:
            raise ValueError("rates must lie in [0, 1]")


@dataclass
class MotionProfile:
    kind: str = "constant_velocity"
    yaw_rate: float = 0.0  # rad/frame, turning only
    period: int = 48  # frames, stop_and_go only

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise InvalidScript(f"unknown motion profile {self.kind!r}")


@dataclass
class ObjectSpec:
    """Explicit initial condition for one object (world frame)."""

    position: tuple[float, float]
    heading: float
    speed: float  # m/s
    profile: MotionProfile = field(default_factory=MotionProfile)
    class_id: int = 0
    dimensions: tuple[float, float, float] | None = None


@dataclass
class EgoProfile:
    kind: str = "static"
    speed: float = 0.0  # m/s
    yaw_rate: float = 0.0  # rad/frame

    def __post_init__(self):
        if self.kind not in EGO_PROFILES:
            raise InvalidScript(f"unknown ego profile {self.kind!r}")


@dataclass
class ScenarioConfig:
    seed: int = 0
    n_frames: int = 100
    n_objects: int = 5
    motion_profiles: list[MotionProfile] = field(default_factory=lambda: [MotionProfile()])
    ego_profile: EgoProfile = field(default_factory=EgoProfile)
    occlusion_script: list[tuple[int, int, int]] = field(default_factory=list)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    frame_rate: float = 12.0
    objects: list[ObjectSpec] | None = None
    camera_yaws: list[float] = field(default_factory=lambda: [0.0])
    focal_length_px: float = 1000.0
    image_size: tuple[float, float] = (1920.0, 1080.0)
    embedding_dim: int = 64
    max_depth: float = 100.0
    min_depth: float = 1.0

    def validate(self):
        if self.n_frames < 1:
            raise InvalidScript("n_frames must be >= 1")
        n_obj = len(self.objects) if self.objects is not None else self.n_objects
        if n_obj < 1:
            raise InvalidScript("need at least one object")
        for entry in self.occlusion_script:
            obj, start, end = entry
            if not 0 <= obj < n_obj:
                raise InvalidScript(f"occlusion refers to unknown object {obj}")
            if not (0 <= start <= end < self.n_frames):
                raise InvalidScript(f"occlusion window {entry} outside [0, {self.n_frames})")
        if not self.motion_profiles:
            raise InvalidScript("motion_profiles must be non-empty")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        w, h = self.image_size
        return CameraIntrinsics.centered(self.focal_length_px, w, h)

    @property
    def num_objects(self) -> int:
        return len(self.objects) if self.objects is not None else self.n_objects


@dataclass
class GroundTruth:
    positions: np.ndarray  # (N, T, 3) world meters
    yaws: np.ndarray  # (N, T)
    dimensions: np.ndarray  # (N, 3)
    class_ids: np.ndarray  # (N,)
    speeds: np.ndarray  # (N, T) m/s
    in_view: np.ndarray  # (N, T, C) bool, center inside camera c's image and depth range
    occluded: np.ndarray  # (N, T) bool, scripted occlusion
    ego_poses: list  # T lists of C CameraPose
    identity_embeddings: np.ndarray  # (N, D) unit vectors
    intrinsics: CameraIntrinsics
    frame_rate: float

    @property
    def visible(self) -> np.ndarray:
        """(N, T) visibility: in some camera's view and not occluded."""
        return self.in_view.any(axis=2) & ~self.occluded

    @property
    def n_objects(self) -> int:
        return self.positions.shape[0]

    @property
    def n_frames(self) -> int:
        return self.positions.shape[1]

    def box(self, obj: int, frame: int) -> Box3D:
        return Box3D(self.positions[obj, frame], self.yaws[obj, frame], self.dimensions[obj])

    def state7(self, obj: int, frame: int) -> np.ndarray:
        return np.concatenate([self.positions[obj, frame], [self.yaws[obj, frame]], self.dimensions[obj]])


# -- generation ---------------------------------------------------------------


def _ego_track(profile: EgoProfile, n_frames: int, dt: float):
    pos = np.zeros((n_frames, 3))
    heading = np.zeros(n_frames)
    pos[:, 2] = CAMERA_HEIGHT
    for k in range(1, n_frames):
        if profile.kind == "static":
            break
        heading[k] = heading[k - 1] + (profile.yaw_rate if profile.kind == "turning" else 0.0)
        step = profile.speed * dt
        pos[k, :2] = pos[k - 1, :2] + step * np.array([math.cos(heading[k - 1]), math.sin(heading[k - 1])])
    return pos, heading


def _sample_objects(config: ScenarioConfig) -> list[ObjectSpec]:
    rng = Xoshiro256(config.seed, _OBJECTS)
    base_speed = config.ego_profile.speed if config.ego_profile.kind != "static" else 0.0
    lanes = (-6.0, -3.0, 0.0, 3.0, 6.0)
    lane_speed = [base_speed + rng.uniform(2.0, 6.0) for _ in lanes]
    specs = []
    for i in range(config.n_objects):
        lane = i % len(lanes)
        x0 = rng.uniform(15.0, 35.0) + 15.0 * (i // len(lanes))
        profile = config.motion_profiles[i % len(config.motion_profiles)]
        heading = rng.uniform(-0.02, 0.02)
        specs.append(ObjectSpec((x0, lanes[lane]), heading, lane_speed[lane], profile))
    return specs


def _object_track(spec: ObjectSpec, n_frames: int, dt: float, height: float):
    prof = spec.profile
    k = np.arange(n_frames)
    if prof.kind == "stop_and_go":
        speeds = spec.speed * 0.5 * (1.0 + np.cos(2.0 * math.pi * k / prof.period))
    else:
        speeds = np.full(n_frames, float(spec.speed))
    yaw_rate = prof.yaw_rate if prof.kind == "turning" else 0.0
    headings = spec.heading + k * yaw_rate
    pos = np.zeros((n_frames, 3))
    pos[:, 2] = height / 2.0
    x0 = np.asarray(spec.position, dtype=float)
    if prof.kind == "constant_velocity":
        step = spec.speed * dt * np.array([math.cos(spec.heading), math.sin(spec.heading)])
        pos[:, :2] = x0 + k[:, None] * step
    else:
        pos[0, :2] = x0
        for j in range(1, n_frames):
            d = speeds[j - 1] * dt
            pos[j, :2] = pos[j - 1, :2] + d * np.array([math.cos(headings[j - 1]), math.sin(headings[j - 1])])
    return pos, wrap_angle(headings), speeds


def _identity_embeddings(config: ScenarioConfig, n: int) -> np.ndarray:
    """Unit vectors with pairwise angles of at least 60 degrees (rejection sampling)."""
    rng = Xoshiro256(config.seed, _EMBED)
    out = []
    while len(out) < n:
        v = np.array(rng.normals(config.embedding_dim))
        v /= np.linalg.norm(v)
        if all(float(v @ u) <= 0.5 for u in out):
            out.append(v)
    return np.array(out).reshape(n, config.embedding_dim)


def _in_view(point, intrinsics: CameraIntrinsics, pose: CameraPose, config: ScenarioConfig) -> bool:
    depth = (pose.rotation @ point + pose.translation)[2]
    if not (config.min_depth <= depth <= config.max_depth):
        return False
    u, v = project_world_to_image(point, intrinsics, pose).pixel
    w, h = intrinsics.image_size
    return 0.0 <= u < w and 0.0 <= v < h


def generate_scenario(config: ScenarioConfig) -> GroundTruth:
    config.validate()
    dt = 1.0 / config.frame_rate
    T = config.n_frames
    specs = config.objects if config.objects is not None else _sample_objects(config)
    N = len(specs)
    ego_pos, ego_heading = _ego_track(config.ego_profile, T, dt)
    poses = [
        [CameraPose.looking_along(ego_pos[k], ego_heading[k] + cy) for cy in config.camera_yaws]
        for k in range(T)
    ]
    positions = np.zeros((N, T, 3))
    yaws = np.zeros((N, T))
    speeds = np.zeros((N, T))
    dims = np.zeros((N, 3))
    classes = np.zeros(N, dtype=int)
    for i, spec in enumerate(specs):
        dims[i] = spec.dimensions if spec.dimensions is not None else CLASS_DIMS[spec.class_id]
        classes[i] = spec.class_id
        positions[i], yaws[i], speeds[i] = _object_track(spec, T, dt, dims[i, 2])
    intr = config.intrinsics
    C = len(config.camera_yaws)
    in_view = np.zeros((N, T, C), dtype=bool)
    for i in range(N):
        for k in range(T):
            for c in range(C):
                in_view[i, k, c] = _in_view(positions[i, k], intr, poses[k][c], config)
    occluded = np.zeros((N, T), dtype=bool)
    for obj, start, end in config.occlusion_script:
        occluded[obj, start:end + 1] = True
    return GroundTruth(positions, yaws, dims, classes, speeds, in_view, occluded, poses,
                       _identity_embeddings(config, N), intr, config.frame_rate)


def crossing_scenario(seed: int, n_frames: int = 48, n_pairs: int = 2, speed: float = 6.0,
                      noise: NoiseConfig | None = None, frame_rate: float = 12.0) -> ScenarioConfig:
    """Pairs of cars whose paths cross mid-sequence, in an X pattern ahead of a static ego.

    Crossing angles and speeds get a small seeded jitter.
    """
    rng = Xoshiro256(seed, _CROSSING)
    dt = 1.0 / frame_rate
    objects = []
    for p in range(n_pairs):
        meet = np.array([20.0 + 12.0 * p, rng.uniform(-2.0, 2.0)])
        for sign in (1.0, -1.0):
            heading = sign * (math.pi / 4 + rng.uniform(-0.2, 0.2))
            v = speed * rng.uniform(0.9, 1.1)
            direction = np.array([math.cos(heading), math.sin(heading)])
            start = meet - direction * v * dt * (n_frames // 2)
            objects.append(ObjectSpec((float(start[0]), float(start[1])), heading, v))
    return ScenarioConfig(seed=seed, n_frames=n_frames, objects=objects, noise=noise or NoiseConfig(),
                          frame_rate=frame_rate)


# -- rendering ----------------------------------------------------------------


@dataclass
class RenderedFrame:
    detections: list[Detection]
    labels: list[int]  # GT object id per detection, -1 for false positives


def _render_object(gt: GroundTruth, obj: int, frame: int, cam: int, noise: NoiseConfig, rng: Xoshiro256,
                   ignore_drop: bool = False):
    """Noisy detection of one object; returns ``(detection, depth_error)`` or None if dropped."""
    intr = gt.intrinsics
    pose = gt.ego_poses[frame][cam]
    dropped = rng.random() < noise.drop_rate
    du, dv = rng.normals(2, noise.center_px_sigma)
    depth_z = rng.normal(0.0, noise.depth_rel_sigma)
    yaw_eps = rng.normal(0.0, noise.yaw_sigma)
    dim_eps = np.array(rng.normals(3, noise.dim_rel_sigma))
    emb_eps = np.array(rng.normals(gt.identity_embeddings.shape[1], noise.embedding_noise_sigma))
    score = rng.uniform(0.6, 1.0)
    if dropped and not ignore_drop:
        return None
    true_proj = project_world_to_image(gt.positions[obj, frame], intr, pose)
    depth = true_proj.depth * (1.0 + depth_z)
    if depth <= 0:
        return None
    depth_err = depth - true_proj.depth
    pixel = (true_proj.pixel[0] + du, true_proj.pixel[1] + dv)
    yaw_obs = wrap_angle(global_to_obs_yaw(gt.yaws[obj, frame], pixel[0], intr, pose.heading) + yaw_eps)
    emb = gt.identity_embeddings[obj] + emb_eps
    emb /= np.linalg.norm(emb)
    try:
        bbox = enclose_2d(box3d_corners(gt.box(obj, frame)), intr, pose, score=score)
    except FullyBehindCamera:
        return None
    det = Detection(
        bbox2d=bbox,
        center_proj=CenterProjection(pixel, depth),
        depth_confidence=math.exp(-abs(depth_err) / DEPTH_CONFIDENCE_SCALE),
        yaw_obs=yaw_obs,
        dimensions=gt.dimensions[obj] * np.maximum(1.0 + dim_eps, 0.05),
        embedding=emb,
        camera_id=cam,
        class_id=int(gt.class_ids[obj]),
    )
    return det, depth_err


def _false_positive(gt: GroundTruth, frame: int, cam: int, rng: Xoshiro256, config_depth=(10.0, 60.0)):
    intr = gt.intrinsics
    pose = gt.ego_poses[frame][cam]
    w, h = intr.image_size
    dim = gt.identity_embeddings.shape[1]
    for _ in range(20):
        u = rng.uniform(0.0, w)
        v = rng.uniform(h * 0.45, h * 0.65)
        depth = rng.uniform(*config_depth)
        world = lift_image_to_world(CenterProjection((u, v), depth), intr, pose)
        free = np.linalg.norm(gt.positions[:, frame, :2] - world[:2], axis=1).min() > 4.0
        if free:
            break
    emb = np.array(rng.normals(dim))
    emb /= np.linalg.norm(emb)
    score = rng.uniform(0.3, 0.7)
    conf = rng.uniform(0.3, 0.9)
    half = 40.0
    bbox = BBox2D(max(u - half, 0.0), max(v - half, 0.0), min(u + half, w), min(v + half, h), score=score)
    return Detection(bbox, CenterProjection((u, v), depth), conf, rng.uniform(-math.pi, math.pi),
                     np.array(CLASS_DIMS[0]), emb, camera_id=cam, class_id=0)


def render_detections(gt: GroundTruth, noise: NoiseConfig, seed: int) -> list[RenderedFrame]:
    """Per-frame noisy detections with GT labels.

    Each camera sees the objects whose centers project inside its image;
    scripted occlusions and random drops produce no detection. With
    probability ``false_positive_rate`` a camera frame gains one false
    positive placed in free space with a random embedding.
    """
    frames = []
    C = len(gt.ego_poses[0])
    for k in range(gt.n_frames):
        dets, labels = [], []
        for c in range(C):
            for i in range(gt.n_objects):
                if gt.occluded[i, k] or not gt.in_view[i, k, c]:
                    continue
                out = _render_object(gt, i, k, c, noise, Xoshiro256(seed, _DETECT, k, c, i))
                if out is None:
                    continue
                dets.append(out[0])
                labels.append(i)
            fp_rng = Xoshiro256(seed, _FALSE_POS, k, c)
            if fp_rng.random() < noise.false_positive_rate:
                dets.append(_false_positive(gt, k, c, fp_rng))
                labels.append(-1)
        frames.append(RenderedFrame(dets, labels))
    return frames


def simulate(config: ScenarioConfig):
    """Generate a scenario and render its detections with the config's own noise and seed."""
    gt = generate_scenario(config)
    return gt, render_detections(gt, config.noise, config.seed)


# -- training corpus ----------------------------------------------------------


def make_training_corpus(configs: list[ScenarioConfig], window: int = 10, camera: int = 0) -> TrajectoryDataset:
    """Fixed-length windows of (observed 7-state, confidence, GT 7-state).

    Observations come from the noise model of each config (drops and false
    positives ignored), lifted back into the world frame. Windows slide by
    one frame over every run of consecutive frames where the object is in
    view of ``camera`` and not occluded.
    """
    if not configs:
        raise ValueError("need at least one scenario config")
    obs_w, conf_w, gt_w, speed_w = [], [], [], []
    for config in configs:
        gt = generate_scenario(config)
        intr = gt.intrinsics
        for i in range(gt.n_objects):
            observed = np.zeros((gt.n_frames, 7))
            conf = np.zeros(gt.n_frames)
            ok = np.zeros(gt.n_frames, dtype=bool)
            for k in range(gt.n_frames):
                if gt.occluded[i, k] or not gt.in_view[i, k, camera]:
                    continue
                out = _render_object(gt, i, k, camera, config.noise,
                                     Xoshiro256(config.seed, _DETECT, k, camera, i), ignore_drop=True)
                if out is None:
                    continue
                det = out[0]
                pose = gt.ego_poses[k][camera]
                pos = lift_image_to_world(det.center_proj, intr, pose)
                yaw = obs_to_global_yaw(det.yaw_obs, det.center_proj.pixel[0], intr, pose.heading)
                observed[k] = np.concatenate([pos, [yaw], det.dimensions])
                conf[k] = det.depth_confidence
                ok[k] = True
            truth = np.array([gt.state7(i, k) for k in range(gt.n_frames)])
            k = 0
            while k < gt.n_frames:
                if not ok[k]:
                    k += 1
                    continue
                end = k
                while end < gt.n_frames and ok[end]:
                    end += 1
                for start in range(k, end - window + 1):
                    sl = slice(start, start + window)
                    o = observed[sl].copy()
                    g = truth[sl].copy()
                    # unwrap yaw within the window so sequences stay continuous
                    g[:, 3] = np.unwrap(g[:, 3])
                    o[:, 3] = g[:, 3] + wrap_angle(o[:, 3] - g[:, 3])
                    obs_w.append(o)
                    conf_w.append(conf[sl])
                    gt_w.append(g)
                    speed_w.append(gt.speeds[i, sl])
                k = end
    if not obs_w:
        D = 7
        return TrajectoryDataset(np.zeros((0, window, D)), np.zeros((0, window)), np.zeros((0, window, D)))
    return TrajectoryDataset(np.array(obs_w), np.array(conf_w), np.array(gt_w), np.array(speed_w))
