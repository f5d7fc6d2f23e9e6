"""JSON-lines wire formats and atomic file writes.

Every record carries ``"v": SCHEMA_VERSION``. Units are meters, radians and
pixels; time is the integer frame index.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .geometry import BBox2D, CameraIntrinsics, CameraPose, CenterProjection
from .state import Detection

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def atomic_write(path, text: str):
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def jsonl(records) -> str:
    return "".join(dumps(r) + "\n" for r in records)


def _floats(values) -> list[float]:
    return [float(x) for x in np.asarray(values, dtype=float).reshape(-1)]


# -- validation helpers -------------------------------------------------------


def read_jsonl(path) -> list[dict]:
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise SchemaError(f"{path}:{lineno}: record is not an object")
            if rec.get("v") != SCHEMA_VERSION:
                raise SchemaError(f"{path}:{lineno}: expected schema version {SCHEMA_VERSION}, got {rec.get('v')!r}")
            rec["_where"] = f"{path}:{lineno}"
            records.append(rec)
    return records


def _num(rec, key):
    value = rec.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SchemaError(f"{rec['_where']}: field {key!r} must be a finite number")
    return float(value)


def _int(rec, key):
    value = rec.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{rec['_where']}: field {key!r} must be an integer")
    return value


def _vec(rec, key, n=None):
    value = rec.get(key)
    if not isinstance(value, list) or (n is not None and len(value) != n):
        raise SchemaError(f"{rec['_where']}: field {key!r} must be a list of {n or 'any'} numbers")
    for x in value:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise SchemaError(f"{rec['_where']}: field {key!r} must contain finite numbers")
    return [float(x) for x in value]


def _str(rec, key, allowed):
    value = rec.get(key)
    if value not in allowed:
        raise SchemaError(f"{rec['_where']}: field {key!r} must be one of {sorted(allowed)}")
    return value


# -- detections ---------------------------------------------------------------


def detection_record(frame: int, det: Detection) -> dict:
    b = det.bbox2d
    return {
        "v": SCHEMA_VERSION,
        "frame": int(frame),
        "camera": int(det.camera_id),
        "class": int(det.class_id),
        "bbox": _floats([b.u_min, b.v_min, b.u_max, b.v_max]),
        "score": float(b.score),
        "center_px": _floats(det.center_proj.pixel),
        "depth": float(det.center_proj.depth),
        "depth_conf": float(det.depth_confidence),
        "yaw_obs": float(det.yaw_obs),
        "dims": _floats(det.dimensions),
        "embedding": _floats(det.embedding),
    }


def parse_detection(rec: dict) -> tuple[int, Detection]:
    bbox = _vec(rec, "bbox", 4)
    score = _num(rec, "score")
    conf = _num(rec, "depth_conf")
    depth = _num(rec, "depth")
    dims = _vec(rec, "dims", 3)
    if not 0.0 <= conf <= 1.0 or depth <= 0 or min(dims) <= 0:
        raise SchemaError(f"{rec['_where']}: depth_conf, depth or dims out of range")
    try:
        det = Detection(
            bbox2d=BBox2D(*bbox, score=score),
            center_proj=CenterProjection(tuple(_vec(rec, "center_px", 2)), depth),
            depth_confidence=conf,
            yaw_obs=_num(rec, "yaw_obs"),
            dimensions=np.array(dims),
            embedding=np.array(_vec(rec, "embedding")),
            camera_id=_int(rec, "camera"),
            class_id=_int(rec, "class"),
        )
    except ValueError as exc:
        raise SchemaError(f"{rec['_where']}: {exc}") from exc
    return _int(rec, "frame"), det


def read_detections(path, n_frames: int) -> list[list[Detection]]:
    frames: list[list[Detection]] = [[] for _ in range(n_frames)]
    last = -1
    for rec in read_jsonl(path):
        k, det = parse_detection(rec)
        if k < last:
            raise SchemaError(f"{rec['_where']}: frame {k} after frame {last}")
        if not 0 <= k < n_frames:
            raise SchemaError(f"{rec['_where']}: frame {k} outside the ego pose range [0, {n_frames})")
        last = k
        frames[k].append(det)
    return frames


# -- ego poses ----------------------------------------------------------------


def ego_record(frame: int, poses: list[CameraPose], intrinsics: list[CameraIntrinsics]) -> dict:
    cams = []
    for pose, intr in zip(poses, intrinsics):
        cams.append({
            "rotation": [_floats(row) for row in pose.rotation],
            "translation": _floats(pose.translation),
            "focal_length_px": float(intr.focal_length_px),
            "principal_point": _floats(intr.principal_point),
            "image_size": _floats(intr.image_size),
        })
    return {"v": SCHEMA_VERSION, "frame": int(frame), "cameras": cams}


@dataclass
class EgoSequence:
    poses: list[list[CameraPose]]
    intrinsics: list[CameraIntrinsics]

    @property
    def n_frames(self) -> int:
        return len(self.poses)


def read_ego(path) -> EgoSequence:
    poses, intrinsics = [], None
    for expected, rec in enumerate(read_jsonl(path)):
        if _int(rec, "frame") != expected:
            raise SchemaError(f"{rec['_where']}: expected frame {expected}")
        cams = rec.get("cameras")
        if not isinstance(cams, list) or not cams:
            raise SchemaError(f"{rec['_where']}: field 'cameras' must be a non-empty list")
        frame_poses, frame_intr = [], []
        for cam in cams:
            if not isinstance(cam, dict):
                raise SchemaError(f"{rec['_where']}: camera entry must be an object")
            cam = {**cam, "_where": rec["_where"]}
            rows = cam.get("rotation")
            if not isinstance(rows, list) or len(rows) != 3:
                raise SchemaError(f"{rec['_where']}: rotation must be 3x3")
            rot = [_vec({"row": row, "_where": rec["_where"]}, "row", 3) for row in rows]
            try:
                frame_poses.append(CameraPose(np.array(rot), np.array(_vec(cam, "translation", 3))))
                frame_intr.append(CameraIntrinsics(_num(cam, "focal_length_px"),
                                                   tuple(_vec(cam, "principal_point", 2)),
                                                   tuple(_vec(cam, "image_size", 2))))
            except ValueError as exc:
                raise SchemaError(f"{rec['_where']}: {exc}") from exc
        if intrinsics is None:
            intrinsics = frame_intr
        elif len(frame_intr) != len(intrinsics):
            raise SchemaError(f"{rec['_where']}: camera count changed mid-sequence")
        poses.append(frame_poses)
    if intrinsics is None:
        raise SchemaError(f"{path}: no ego pose records")
    return EgoSequence(poses, intrinsics)


# -- ground truth -------------------------------------------------------------


def gt_records(gt) -> list[dict]:
    out = []
    visible = gt.visible
    for k in range(gt.n_frames):
        for i in range(gt.n_objects):
            out.append({
                "v": SCHEMA_VERSION,
                "frame": k,
                "id": i,
                "class": int(gt.class_ids[i]),
                "position": _floats(gt.positions[i, k]),
                "yaw": float(gt.yaws[i, k]),
                "dims": _floats(gt.dimensions[i]),
                "visible": bool(visible[i, k]),
                "occluded": bool(gt.occluded[i, k]),
            })
    return out


@dataclass
class GTObject:
    id: int
    class_id: int
    position: list[float]
    yaw: float
    dims: list[float]
    visible: bool
    occluded: bool


def read_gt(path) -> list[list[GTObject]]:
    frames: list[list[GTObject]] = []
    for rec in read_jsonl(path):
        k = _int(rec, "frame")
        if k < len(frames) - 1:
            raise SchemaError(f"{rec['_where']}: frames must be non-decreasing")
        while len(frames) <= k:
            frames.append([])
        for flag in ("visible", "occluded"):
            if not isinstance(rec.get(flag), bool):
                raise SchemaError(f"{rec['_where']}: field {flag!r} must be a boolean")
        dims = _vec(rec, "dims", 3)
        if min(dims) <= 0:
            raise SchemaError(f"{rec['_where']}: dims must be positive")
        frames[k].append(GTObject(_int(rec, "id"), _int(rec, "class"), _vec(rec, "position", 3), _num(rec, "yaw"),
                                  dims, rec["visible"], rec["occluded"]))
    return frames


# -- tracks -------------------------------------------------------------------

TRACK_PHASES = ("tracked", "lost")


def track_record(frame: int, out) -> dict:
    return {
        "v": SCHEMA_VERSION,
        "frame": int(frame),
        "track_id": int(out.track_id),
        "class": int(out.class_id),
        "position": _floats(out.position),
        "yaw": float(out.yaw),
        "dims": _floats(out.dimensions),
        "velocity": _floats(out.velocity),
        "score": float(out.score),
        "phase": out.phase,
    }


@dataclass
class TrackRow:
    frame: int
    track_id: int
    class_id: int
    position: list[float]
    yaw: float
    dims: list[float]
    velocity: list[float]
    score: float
    phase: str


def read_tracks(path) -> list[TrackRow]:
    rows = []
    last = -1
    for rec in read_jsonl(path):
        k = _int(rec, "frame")
        if k < last:
            raise SchemaError(f"{rec['_where']}: frame {k} after frame {last}")
        last = k
        dims = _vec(rec, "dims", 3)
        if min(dims) <= 0:
            raise SchemaError(f"{rec['_where']}: dims must be positive")
        rows.append(TrackRow(k, _int(rec, "track_id"), _int(rec, "class"), _vec(rec, "position", 3),
                             _num(rec, "yaw"), dims, _vec(rec, "velocity", 3), _num(rec, "score"),
                             _str(rec, "phase", TRACK_PHASES)))
    return rows
