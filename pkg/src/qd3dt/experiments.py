"""Canned experiment setups shared by the acceptance tests and the scripts in ``scripts/``."""
from __future__ import annotations

import numpy as np

from .metrics import EvalConfig
from .motion import OptimizerConfig, TrajectoryDataset, VeloLSTMShape, init_params, make_motion_factory, train_velolstm
from .motion.velolstm import forward_sequence, motion_losses
from .pipeline import run_scenario
from .similarity import AffinityConfig
from .simworld import EgoProfile, MotionProfile, NoiseConfig, ScenarioConfig, crossing_scenario, make_training_corpus
from .tracker import TrackerConfig

# -- occlusion recovery --------------------------------------------------------


def occlusion_scenario(seed: int, start: int = 15, length: int = 6) -> ScenarioConfig:
    """Three cars on linear paths, moderate noise, object 0 hidden for ``length`` frames."""
    return ScenarioConfig(seed=seed, n_frames=40, n_objects=3,
                          noise=NoiseConfig(center_px_sigma=2.0, depth_rel_sigma=0.03, yaw_sigma=0.05,
                                            dim_rel_sigma=0.03, embedding_noise_sigma=0.05),
                          occlusion_script=[(0, start, start + length - 1)])


def occlusion_switches(seed: int, lifespan: int) -> int:
    return run_scenario(occlusion_scenario(seed), TrackerConfig(lifespan_frames=lifespan), amota=False).IDS


# -- ablation on crossing objects ---------------------------------------------

CROSSING_NOISE = NoiseConfig(center_px_sigma=3.0, depth_rel_sigma=0.05, yaw_sigma=0.1, dim_rel_sigma=0.05,
                             embedding_noise_sigma=0.1, false_positive_rate=0.2, drop_rate=0.05)

ABLATION_VARIANTS = {
    "full": TrackerConfig(),
    "drop_deep": TrackerConfig(use_deep=False),
    "drop_motion": TrackerConfig(use_motion=False),
    "cosine_only": TrackerConfig(affinity=AffinityConfig(motion_mode="cosine_only")),
}


def crossing_ablation(seeds, variants=None) -> dict[str, float]:
    """Mean AMOTA per tracker variant over noisy crossing scenarios."""
    variants = variants or ABLATION_VARIANTS
    out = {}
    for name, config in variants.items():
        scores = [run_scenario(crossing_scenario(s, noise=CROSSING_NOISE), config, eval_config=EvalConfig())["AMOTA_1"]
                  for s in seeds]
        out[name] = float(np.mean(scores))
    return out


# -- motion models -------------------------------------------------------------

MOTION_NOISE = NoiseConfig(center_px_sigma=2.0, depth_rel_sigma=0.02, yaw_sigma=0.05, dim_rel_sigma=0.03)


def motion_scenario(seed: int, n_frames: int = 40) -> ScenarioConfig:
    """Linear and gently turning cars seen from a forward-driving ego."""
    profiles = [MotionProfile(), MotionProfile("turning", yaw_rate=0.01 * ((seed % 5) - 2))]
    return ScenarioConfig(seed=seed, n_frames=n_frames, n_objects=5, motion_profiles=profiles,
                          ego_profile=EgoProfile("straight", speed=10.0), noise=MOTION_NOISE)


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))


def refinement_trial(seed: int, factory=None) -> tuple[float, float]:
    """Position RMSE of a motion model's refined states and of the raw detections over one scenario.

    ``factory`` builds a model from ``(observation, confidence)``; KF3D by default.
    """
    factory = factory or make_motion_factory("kf3d")
    data = make_training_corpus([motion_scenario(seed)], window=40)
    refined, raw, truth = [], [], []
    for obs, conf, gt in zip(data.observations, data.confidences, data.ground_truth):
        model = factory(obs[0], conf[0])
        out = [obs[0, :3]]
        for t in range(1, len(obs)):
            model.predict()
            out.append(model.update(obs[t], conf[t])[:3])
        refined.append(out)
        raw.append(obs[:, :3])
        truth.append(gt[:, :3])
    return _rmse(np.array(refined), np.array(truth)), _rmse(np.array(raw), np.array(truth))


def zero_motion_predict_loss(data: TrajectoryDataset, config: OptimizerConfig) -> float:
    """Prediction loss of the baseline that repeats the previous observation."""
    predicted = np.concatenate([data.observations[:, :1], data.observations[:, :-1]], axis=1)
    return motion_losses(predicted, data.observations, data.ground_truth, config.dt, config.weights)[1]["predict"]


def velolstm_holdout(train_seeds, holdout_seeds, window: int = 10, hidden: int = 128,
                     config: OptimizerConfig | None = None):
    """Train on one set of scenarios and score prediction loss on another.

    Returns ``(params, trained_loss, baseline_loss, curve)``.
    """
    config = config or OptimizerConfig(learning_rate=0.01, epochs=30, batch_size=32, dt=1.0 / 12.0)
    train = make_training_corpus([motion_scenario(s) for s in train_seeds], window=window)
    hold = make_training_corpus([motion_scenario(s) for s in holdout_seeds], window=window)
    params, curve = train_velolstm(init_params(VeloLSTMShape(hidden=hidden), seed=config.seed), train, config)
    predicted, refined, _ = forward_sequence(params, hold.observations, hold.confidences)
    trained = motion_losses(predicted, refined, hold.ground_truth, config.dt, config.weights)[1]["predict"]
    return params, trained, zero_motion_predict_loss(hold, config), curve
