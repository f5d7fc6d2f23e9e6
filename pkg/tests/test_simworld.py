import numpy as np
import pytest

from qd3dt.geometry import obs_to_global_yaw, project_world_to_image
from qd3dt.simworld import (
    EgoProfile,
    InvalidScript,
    MotionProfile,
    NoiseConfig,
    ObjectSpec,
    ScenarioConfig,
    crossing_scenario,
    generate_scenario,
    make_training_corpus,
    simulate,
)
from qd3dt.state import lift_detection


def one_car(n_frames=20, **kw):
    return ScenarioConfig(seed=1, n_frames=n_frames, objects=[ObjectSpec((20.0, 0.0), 0.0, 5.0)], **kw)


def test_noise_free_detections_lift_to_ground_truth():
    gt, frames = simulate(ScenarioConfig(seed=3, n_frames=30, n_objects=4))
    for k, fr in enumerate(frames):
        for det, lbl in zip(fr.detections, fr.labels):
            pose = gt.ego_poses[k][det.camera_id]
            state = lift_detection(det, gt.intrinsics, pose)
            np.testing.assert_allclose(state.position, gt.positions[lbl, k], atol=1e-9)
            yaw = obs_to_global_yaw(det.yaw_obs, det.center_proj.pixel[0], gt.intrinsics, pose.heading)
            assert abs(np.angle(np.exp(1j * (yaw - gt.yaws[lbl, k])))) < 1e-9
            assert det.depth_confidence == 1.0


def test_occlusion_window_is_honoured():
    gt, frames = simulate(one_car(occlusion_script=[(0, 5, 9)]))
    for k, fr in enumerate(frames):
        assert (0 in fr.labels) == (not 5 <= k <= 9)
    assert gt.occluded[0, 5:10].all() and not gt.occluded[0, 10]


def test_same_seed_same_world():
    cfg = ScenarioConfig(seed=11, n_frames=25, noise=NoiseConfig(2, 0.05, 0.1, 0.05, 0.1, 0.3, 0.1))
    gt1, f1 = simulate(cfg)
    gt2, f2 = simulate(cfg)
    assert np.array_equal(gt1.positions, gt2.positions)
    for a, b in zip(f1, f2):
        assert a.labels == b.labels
        assert [d.center_proj.pixel for d in a.detections] == [d.center_proj.pixel for d in b.detections]


def test_different_seeds_differ():
    a = generate_scenario(ScenarioConfig(seed=1, n_frames=5))
    b = generate_scenario(ScenarioConfig(seed=2, n_frames=5))
    assert not np.array_equal(a.positions, b.positions)


def test_training_windows_slide_by_one():
    data = make_training_corpus([one_car(20)], window=10)
    assert len(data) == 11


def test_depth_noise_has_requested_spread():
    cfg = ScenarioConfig(seed=4, n_frames=60, n_objects=6, noise=NoiseConfig(depth_rel_sigma=0.05))
    gt, frames = simulate(cfg)
    rel = []
    for k, fr in enumerate(frames):
        for det, lbl in zip(fr.detections, fr.labels):
            true = project_world_to_image(gt.positions[lbl, k], gt.intrinsics, gt.ego_poses[k][0]).depth
            rel.append(det.center_proj.depth / true - 1)
    assert len(rel) > 200
    assert abs(np.std(rel) - 0.05) < 0.01


def test_false_positive_rate():
    cfg = ScenarioConfig(seed=5, n_frames=400, n_objects=1, noise=NoiseConfig(false_positive_rate=0.25))
    _, frames = simulate(cfg)
    rate = np.mean([-1 in fr.labels for fr in frames])
    assert abs(rate - 0.25) < 0.06


def test_moving_ego_and_profiles():
    cfg = ScenarioConfig(seed=2, n_frames=30, n_objects=3, ego_profile=EgoProfile("straight", 8.0),
                         motion_profiles=[MotionProfile("turning", 0.02), MotionProfile("stop_and_go", period=12)])
    gt = generate_scenario(cfg)
    assert gt.ego_poses[-1][0].center[0] == pytest.approx(8.0 * 29 / 12)
    assert gt.speeds.min() >= 0


def test_crossing_pairs_meet():
    gt = generate_scenario(crossing_scenario(0, n_frames=48))
    mid = 24
    for p in range(2):
        gap = np.linalg.norm(gt.positions[2 * p, mid, :2] - gt.positions[2 * p + 1, mid, :2])
        assert gap < 1e-9


def test_invalid_scripts_rejected():
    with pytest.raises(InvalidScript):
        generate_scenario(one_car(occlusion_script=[(3, 0, 1)]))
    with pytest.raises(InvalidScript):
        generate_scenario(one_car(occlusion_script=[(0, 5, 40)]))
    with pytest.raises(InvalidScript):
        MotionProfile("teleport")
    with pytest.raises(ValueError):
        NoiseConfig(drop_rate=1.5)
