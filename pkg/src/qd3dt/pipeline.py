"""In-memory simulate -> track -> evaluate plumbing shared by the CLI, scripts and tests."""
from __future__ import annotations

from .geometry import Box3D
from .metrics import EvalConfig, build_report, clear_metrics, evaluate_sequence
from .motion import make_motion_factory
from .simworld import GroundTruth, ScenarioConfig, simulate
from .tracker import FrameResult, Tracker, TrackerConfig


def track_sequence(det_frames, poses, intrinsics, config: TrackerConfig, motion_factory=None) -> list[FrameResult]:
    tracker = Tracker(config, intrinsics, motion_factory or make_motion_factory("kf3d"))
    return [tracker.step(k, dets, poses[k]) for k, dets in enumerate(det_frames)]


def gt_eval_frames(gt: GroundTruth) -> list[list[tuple[int, Box3D]]]:
    """Visible ground-truth boxes per frame."""
    vis = gt.visible
    return [[(i, gt.box(i, k)) for i in range(gt.n_objects) if vis[i, k]] for k in range(gt.n_frames)]


def pred_eval_frames(results: list[FrameResult], include_lost: bool = False):
    out = []
    for r in results:
        out.append([(o.track_id, Box3D(o.position, o.yaw, o.dimensions), o.score)
                    for o in r.outputs if include_lost or o.phase == "tracked"])
    return out


def run_scenario(scenario: ScenarioConfig, config: TrackerConfig = None, motion_factory=None,
                 eval_config: EvalConfig = None, amota: bool = True):
    """Simulate, track and score one scenario.

    Returns the report dict (all fixed keys) when ``amota`` is set, otherwise
    the CLEAR metrics alone.
    """
    config = config or TrackerConfig()
    eval_config = eval_config or EvalConfig()
    gt, frames = simulate(scenario)
    results = track_sequence([f.detections for f in frames], gt.ego_poses, [gt.intrinsics] * len(gt.ego_poses[0]),
                             config, motion_factory)
    gts, preds = gt_eval_frames(gt), pred_eval_frames(results)
    if amota:
        return build_report(gts, preds, eval_config)
    return clear_metrics(evaluate_sequence(gts, preds, eval_config), eval_config)
