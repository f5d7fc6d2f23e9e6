from .kalman import KalmanNoise, KalmanState, SingularInnovation, kf3d_predict, kf3d_update
from .models import MOTION_MODELS, KalmanMotion, MomentumMotion, MotionModel, NoMotion, VeloLSTMMotion, make_motion_factory
from .momentum import momentum_update
from .training import DivergedTraining, OptimizerConfig, TrajectoryDataset, train_velolstm
from .velolstm import (
    LossWeights,
    SequenceTooShort,
    VeloLSTMShape,
    init_params,
    load_params,
    loss_and_grad,
    motion_losses,
    save_params,
    smooth_l1,
    velolstm_predict,
    velolstm_update,
    zero_params,
)
