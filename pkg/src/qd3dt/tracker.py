"""Online 3D tracker: association, lifecycle, and cross-camera deduplication.

Each call to :meth:`Tracker.step` consumes one frame of detections from all
cameras. Tracks move through ``birth -> tracked <-> lost -> death``.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import BBox2D, CameraIntrinsics, CameraPose
from .matching import MATCHERS
from .motion import make_motion_factory
from .motion.models import MotionModel
from .similarity import AffinityConfig, affinity_deep, affinity_location, affinity_motion, aggregate_affinity, state_distance
from .state import Detection, ObjectState, lift_detection

log = logging.getLogger(__name__)

PHASES = ("birth", "tracked", "lost", "death")
SMALL_CLASSES = frozenset({1, 2})  # pedestrian, cyclist


class InconsistentFrameIndex(ValueError):
    pass


@dataclass
class TrackerConfig:
    affinity: AffinityConfig = field(default_factory=AffinityConfig)
    match_threshold: float = 0.2
    lifespan_frames: int = 10
    range_min: float = 0.15
    range_max: float = 100.0
    dedup_dist_vehicle: float = 2.0
    dedup_dist_small: float = 1.0
    matcher: str = "greedy"
    spawn_score: float = 0.3
    embedding_update: str = "ema"  # or "last"
    embedding_momentum: float = 0.9
    history_length: int = 5
    # hits needed before a track is reported; 2 hides births until their first re-match
    min_hits: int = 1
    use_deep: bool = True
    use_motion: bool = True
    use_location: bool = True
    use_depth_confidence: bool = True
    class_gating: bool = True

    def __post_init__(self):
        if not 0 < self.range_min < self.range_max:
            raise ValueError("need 0 < range_min < range_max")
        if self.lifespan_frames < 1:
            raise ValueError("lifespan_frames must be >= 1")
        if self.matcher not in MATCHERS:
            raise ValueError(f"unknown matcher {self.matcher!r}")
        if self.embedding_update not in ("ema", "last"):
            raise ValueError(f"unknown embedding_update {self.embedding_update!r}")
        if not 0.0 <= self.embedding_momentum < 1.0:
            raise ValueError("embedding_momentum must lie in [0, 1)")
        if self.history_length < 1 or self.min_hits < 1:
            raise ValueError("history_length and min_hits must be >= 1")


@dataclass
class Track:
    id: int
    phase: str
    state: ObjectState
    motion: MotionModel
    class_id: int
    depth_confidence: float
    score: float
    velocity_history: deque
    frames_since_match: int = 0
    hits: int = 1
    last_bbox: BBox2D | None = None

    @property
    def accumulated_velocity(self) -> np.ndarray:
        if not self.velocity_history:
            return np.zeros(3)
        return np.mean(np.array(self.velocity_history), axis=0)


@dataclass(frozen=True)
class TrackOutput:
    """Snapshot of a reported track after a step."""

    track_id: int
    class_id: int
    position: tuple
    yaw: float
    dimensions: tuple
    velocity: tuple
    score: float
    phase: str


@dataclass
class FrameResult:
    frame: int
    assignments: list[tuple[int, int]]  # (track id, detection index into the input list)
    spawned: list[int]
    lost: list[int]
    killed: list[int]
    outputs: list[TrackOutput]
    match_affinities: list[float]


def dedup_threshold(class_id: int, config: TrackerConfig) -> float:
    return config.dedup_dist_small if class_id in SMALL_CLASSES else config.dedup_dist_vehicle


def cross_camera_dedup(detections: list[Detection], positions, config: TrackerConfig) -> list[int]:
    """Indices of detections kept after removing cross-camera duplicates.

    Two detections are duplicates when they share a class, come from
    different cameras and lie within the class distance threshold. Within a
    duplicate group only the highest 3D score survives (earlier index on ties).
    """
    positions = [np.asarray(p, dtype=float) for p in positions]
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score_3d, i))
    kept: list[int] = []
    for i in order:
        di = detections[i]
        duplicate = False
        for j in kept:
            dj = detections[j]
            if dj.class_id != di.class_id or dj.camera_id == di.camera_id:
                continue
            if np.linalg.norm(positions[i] - positions[j]) <= dedup_threshold(di.class_id, config):
                duplicate = True
                break
        if not duplicate:
            kept.append(i)
    return sorted(kept)


def depth_order_gate(track_states, det_state, config: AffinityConfig) -> np.ndarray:
    """Gate ``exp(-distance / r)`` for each track relative to one detection.

    Sorting tracks by the returned gate (descending) gives their depth order
    around the detection; the nearest track gets the largest gate.
    """
    dist = np.array([state_distance(t, det_state, config) for t in track_states], dtype=float)
    return np.exp(-dist / config.location_scale_r)


def lifecycle_transition(track: Track, matched: bool, config: TrackerConfig, distance_to_ego: float) -> str:
    """Next phase of a track. Mutates ``frames_since_match``."""
    if matched:
        track.frames_since_match = 0
        return "tracked"
    track.frames_since_match += 1
    if track.phase == "birth":
        return "death"
    if track.frames_since_match > config.lifespan_frames:
        return "death"
    if not config.range_min <= distance_to_ego <= config.range_max:
        return "death"
    return "lost"


class Tracker:
    """Single-sequence online tracker. Not thread-safe; one instance per sequence."""

    def __init__(self, config: TrackerConfig, intrinsics: list[CameraIntrinsics] | CameraIntrinsics,
                 motion_factory=None):
        self.config = config
        self.intrinsics = [intrinsics] if isinstance(intrinsics, CameraIntrinsics) else list(intrinsics)
        self.motion_factory = motion_factory or make_motion_factory("kf3d")
        self.tracks: list[Track] = []
        self.next_id = 0
        self.last_frame: int | None = None
        self._match = MATCHERS[config.matcher]

    # -- helpers ------------------------------------------------------------

    def _confidence(self, det: Detection) -> float:
        return det.depth_confidence if self.config.use_depth_confidence else 1.0

    def _score(self, det: Detection) -> float:
        return det.score_3d if self.config.use_depth_confidence else det.bbox2d.score

    def _affinity(self, tracks, predicted, prev_positions, dets, det_states) -> np.ndarray:
        cfg = self.config
        acfg = cfg.affinity
        n, m = len(tracks), len(dets)
        if cfg.use_deep:
            deep = affinity_deep([t.state.embedding for t in tracks], [s.embedding for s in det_states], acfg.deep_mode)
        else:
            deep = np.zeros((n, m))
        location = np.ones((n, m))
        motion = np.ones((n, m))
        for j, (det, ds) in enumerate(zip(dets, det_states)):
            if cfg.use_location:
                if acfg.location_mode == "state_distance":
                    location[:, j] = depth_order_gate(predicted, ds, acfg)
                else:
                    location[:, j] = [affinity_location(p, ds, acfg, t.last_bbox, det.bbox2d)
                                      for t, p in zip(tracks, predicted)]
            if cfg.use_motion:
                motion[:, j] = [affinity_motion(prev, t.accumulated_velocity, ds.position, acfg)
                                for t, prev in zip(tracks, prev_positions)]
        w = acfg.w_deep if cfg.use_deep else 0.0
        total = aggregate_affinity(deep, location, motion, w)
        if cfg.class_gating:
            same = np.array([[t.class_id == d.class_id for d in dets] for t in tracks], dtype=bool)
            total = np.where(same, total, 0.0)
        return total

    def _spawn(self, det: Detection, state: ObjectState) -> Track:
        model = self.motion_factory(state.as_vector7(), self._confidence(det))
        track = Track(
            id=self.next_id,
            phase="birth",
            state=state,
            motion=model,
            class_id=det.class_id,
            depth_confidence=det.depth_confidence,
            score=self._score(det),
            velocity_history=deque(maxlen=self.config.history_length),
            last_bbox=det.bbox2d,
        )
        self.next_id += 1
        return track

    def _update_embedding(self, track: Track, emb: np.ndarray):
        if self.config.embedding_update == "last":
            track.state.embedding = emb.copy()
            return
        beta = self.config.embedding_momentum
        mixed = beta * track.state.embedding + (1.0 - beta) * emb
        norm = np.linalg.norm(mixed)
        track.state.embedding = mixed / norm if norm > 0 else emb.copy()

    def _output(self, t: Track) -> TrackOutput:
        phase = "lost" if t.phase == "lost" else "tracked"
        return TrackOutput(
            track_id=t.id,
            class_id=t.class_id,
            position=tuple(float(x) for x in t.state.position),
            yaw=float(t.state.yaw),
            dimensions=tuple(float(x) for x in t.state.dimensions),
            velocity=tuple(float(x) for x in t.accumulated_velocity),
            score=float(t.score),
            phase=phase,
        )

    # -- main loop ----------------------------------------------------------

    def step(self, frame: int, detections: list[Detection], ego_poses: list[CameraPose] | CameraPose) -> FrameResult:
        if self.last_frame is not None and frame <= self.last_frame:
            raise InconsistentFrameIndex(f"frame {frame} after {self.last_frame}")
        self.last_frame = frame
        poses = [ego_poses] if isinstance(ego_poses, CameraPose) else list(ego_poses)
        cfg = self.config

        states = [lift_detection(d, self.intrinsics[d.camera_id], poses[d.camera_id]) for d in detections]
        keep = cross_camera_dedup(detections, [s.position for s in states], cfg)
        dets = [detections[i] for i in keep]
        det_states = [states[i] for i in keep]

        tracks = self.tracks
        prev_positions = [t.state.position.copy() for t in tracks]
        predicted = [t.state.with_vector7(t.motion.predict()) for t in tracks]

        pairs: list[tuple[int, int]] = []
        affinity = None
        if tracks and dets:
            affinity = self._affinity(tracks, predicted, prev_positions, dets, det_states)
            pairs = self._match(affinity, cfg.match_threshold)
        matched_tracks = {r: c for r, c in pairs}
        matched_dets = {c for _, c in pairs}

        ego_center = poses[0].center
        assignments, lost, killed, match_aff = [], [], [], []
        survivors = []
        for r, track in enumerate(tracks):
            if r in matched_tracks:
                c = matched_tracks[r]
                det, ds = dets[c], det_states[c]
                refined = track.motion.update(ds.as_vector7(), self._confidence(det))
                track.velocity_history.append(refined[:3] - prev_positions[r])
                embedding = track.state.embedding
                track.state = ObjectState(refined[:3], float(refined[3]), np.maximum(refined[4:7], 1e-3), embedding)
                self._update_embedding(track, ds.embedding)
                track.depth_confidence = det.depth_confidence
                track.score = self._score(det)
                track.last_bbox = det.bbox2d
                track.hits += 1
                track.phase = lifecycle_transition(track, True, cfg, 0.0)
                assignments.append((track.id, keep[c]))
                match_aff.append(float(affinity[r, c]))
            else:
                coasted = track.motion.coast()
                track.state = track.state.with_vector7(coasted)
                dist = float(np.linalg.norm(track.state.position - ego_center))
                track.phase = lifecycle_transition(track, False, cfg, dist)
                if track.phase == "lost":
                    lost.append(track.id)
            track.state.velocity = track.accumulated_velocity
            if track.phase == "death":
                killed.append(track.id)
            else:
                survivors.append(track)

        # spawn in a canonical order so ids do not depend on input ordering
        fresh = [c for c in range(len(dets)) if c not in matched_dets and self._score(dets[c]) >= cfg.spawn_score]
        fresh.sort(key=lambda c: (-self._score(dets[c]), tuple(det_states[c].position), keep[c]))
        spawned = []
        for c in fresh:
            track = self._spawn(dets[c], det_states[c])
            survivors.append(track)
            spawned.append(track.id)
        self.tracks = sorted(survivors, key=lambda t: t.id)

        outputs = [self._output(t) for t in self.tracks if t.phase == "lost" or t.hits >= cfg.min_hits]
        log.debug("frame %d: %d matched, %d spawned, %d lost, %d killed", frame, len(pairs), len(spawned),
                  len(lost), len(killed))
        return FrameResult(frame, sorted(assignments), spawned, lost, killed, outputs, match_aff)

