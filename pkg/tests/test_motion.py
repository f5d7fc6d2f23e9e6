import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qd3dt.motion import (
    KalmanMotion,
    KalmanState,
    MomentumMotion,
    NoMotion,
    OptimizerConfig,
    SequenceTooShort,
    TrajectoryDataset,
    VeloLSTMMotion,
    VeloLSTMShape,
    init_params,
    kf3d_predict,
    kf3d_update,
    load_params,
    loss_and_grad,
    make_motion_factory,
    momentum_update,
    motion_losses,
    save_params,
    train_velolstm,
    velolstm_predict,
    velolstm_update,
    zero_params,
)
from qd3dt.motion.velolstm import ModelFormatError, forward_sequence, linear_motion_loss, shape_of

SMALL = VeloLSTMShape(hidden=6, feature=4, history=3)


def obs7(x=0.0, y=0.0, yaw=0.0):
    return np.array([x, y, 0.75, yaw, 4.5, 1.8, 1.5])


# -- Kalman --------------------------------------------------------------------


def _is_spd(P):
    return np.allclose(P, P.T, atol=1e-9) and np.all(np.linalg.eigvalsh(P) > 0)


def test_kf_predict_moves_by_velocity():
    s = KalmanState.from_observation(obs7())
    s.mean[7:10] = [1.0, 0.5, 0.0]
    p = kf3d_predict(s)
    np.testing.assert_allclose(p.mean[:3], [1.0, 0.5, 0.75])
    assert _is_spd(p.covariance)


def test_kf_update_pulls_toward_observation_and_keeps_spd():
    s = kf3d_predict(KalmanState.from_observation(obs7()))
    u = kf3d_update(s, obs7(x=2.0))
    assert 0.0 < u.mean[0] < 2.0
    assert _is_spd(u.covariance)


def test_kf_low_confidence_moves_less():
    s = kf3d_predict(KalmanState.from_observation(obs7()))
    sure = kf3d_update(s, obs7(x=2.0), confidence=1.0)
    unsure = kf3d_update(s, obs7(x=2.0), confidence=0.2)
    assert unsure.mean[0] < sure.mean[0]


def test_kf_yaw_innovation_is_wrapped():
    s = KalmanState.from_observation(obs7(yaw=math.pi - 0.05))
    u = kf3d_update(kf3d_predict(s), obs7(yaw=-math.pi + 0.05))
    # the update crosses the +-pi seam instead of swinging through zero
    assert abs(u.mean[3]) > math.pi - 0.1


@given(st.integers(0, 10_000))
def test_kf_covariance_stays_spd_over_random_runs(seed):
    rng = np.random.default_rng(seed)
    s = KalmanState.from_observation(obs7())
    for _ in range(20):
        s = kf3d_predict(s)
        if rng.random() < 0.7:
            s = kf3d_update(s, obs7(*rng.normal(size=2), yaw=rng.uniform(-3, 3)), confidence=rng.uniform(0.05, 1))
        assert _is_spd(s.covariance)


def test_kf_converges_on_constant_velocity():
    m = KalmanMotion(obs7())
    for k in range(1, 60):
        m.predict()
        m.update(obs7(x=0.5 * k))
    np.testing.assert_allclose(m.velocity, [0.5, 0.0, 0.0], atol=1e-3)


# -- momentum ------------------------------------------------------------------


def test_momentum_update_blends_and_wraps():
    out = momentum_update(obs7(x=0.0), obs7(x=2.0), 0.5)
    assert out[0] == pytest.approx(1.0)
    out = momentum_update(obs7(yaw=math.pi - 0.1), obs7(yaw=-math.pi + 0.1), 0.5)
    assert abs(abs(out[3]) - math.pi) < 1e-9
    with pytest.raises(ValueError):
        momentum_update(obs7(), obs7(), 1.5)


@pytest.mark.parametrize("m", [0.0, 1.0])
def test_momentum_extremes(m):
    out = momentum_update(obs7(x=0.0), obs7(x=2.0), m)
    assert out[0] == pytest.approx(2.0 * (1 - m))


# -- VeloLSTM ------------------------------------------------------------------


def test_param_shapes_match_architecture():
    p = init_params(VeloLSTMShape(), seed=0)
    H, F = 128, 64
    assert p["p.enc_vel.w"].shape == (5 * 7, F)
    assert p["p.lstm1.wx"].shape == (F, 4 * H)
    assert p["u.lstm1.wx"].shape == (3 * F, 4 * H)
    assert shape_of(p) == VeloLSTMShape()


def test_predict_is_prev_plus_velocity_exactly():
    p = init_params(SMALL, seed=1)
    prev = obs7(3.0, -1.0, 0.4)
    hist = np.random.default_rng(0).normal(size=(2, 7)) * 0.1
    pred, vel, _ = velolstm_predict(p, prev, hist)
    assert np.array_equal(pred, prev + vel)


def test_zero_params_give_zero_motion():
    p = zero_params(SMALL)
    pred, vel, h = velolstm_predict(p, obs7(1.0), np.zeros((0, 7)))
    assert np.array_equal(vel, np.zeros(7))
    refined, _, _ = velolstm_update(p, obs7(5.0), 1.0, pred, obs7(1.0))
    np.testing.assert_array_equal(refined, pred)


def test_linear_motion_loss_zero_on_linear_sequence():
    t = np.arange(6)[None, :, None] * np.array([1.0, 2.0, 0.0])
    assert linear_motion_loss(t) == 0.0
    with pytest.raises(SequenceTooShort):
        linear_motion_loss(t[:, :2])


def test_motion_losses_zero_when_exact():
    gt = np.cumsum(np.ones((1, 5, 7)), axis=1)
    total, parts = motion_losses(gt, gt, gt)
    assert parts["refine"] == 0.0 and parts["predict"] == 0.0 and parts["linear"] == 0.0


def _fd_worst(params, obs, conf, gt, dt, coords, h=1e-6):
    _, _, grads = loss_and_grad(params, obs, conf, gt, dt)
    worst = 0.0
    for name, idx in coords:
        arr = params[name]
        old = arr[idx]
        arr[idx] = old + h
        up = loss_and_grad(params, obs, conf, gt, dt)[0]
        arr[idx] = old - h
        down = loss_and_grad(params, obs, conf, gt, dt)[0]
        arr[idx] = old
        num = (up - down) / (2 * h)
        worst = max(worst, abs(num - grads[name][idx]) / max(abs(num) + abs(grads[name][idx]), 1e-6))
    return worst


def random_problem(seed, shape=SMALL, B=2, T=5):
    rng = np.random.default_rng(seed)
    params = init_params(shape, seed=seed, output_scale=1.0)
    gt = np.cumsum(rng.normal(size=(B, T, 7)) * 0.3, axis=1)
    obs = gt + rng.normal(size=gt.shape) * 0.2
    conf = rng.uniform(0.2, 1.0, size=(B, T))
    return rng, params, obs, conf, gt


@pytest.mark.parametrize("seed", range(3))
def test_velolstm_gradients_match_finite_differences(seed):
    rng, params, obs, conf, gt = random_problem(seed)
    coords = []
    for name in sorted(params):
        arr = params[name]
        for _ in range(2):
            coords.append((name, tuple(int(rng.integers(0, s)) for s in arr.shape)))
    assert _fd_worst(params, obs, conf, gt, 0.5, coords) < 1e-4


def test_save_load_roundtrip(tmp_path):
    p = init_params(SMALL, seed=3)
    path = tmp_path / "m.vlstm"
    save_params(p, path)
    q = load_params(path)
    assert sorted(p) == sorted(q)
    for k in p:
        assert np.array_equal(p[k], q[k])


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.vlstm"
    bad.write_bytes(b"NOTAMODEL")
    with pytest.raises(ModelFormatError):
        load_params(bad)
    p = init_params(SMALL, seed=3)
    good = tmp_path / "good.vlstm"
    save_params(p, good)
    (tmp_path / "cut.vlstm").write_bytes(good.read_bytes()[:-10])
    with pytest.raises(ModelFormatError):
        load_params(tmp_path / "cut.vlstm")


def test_training_reduces_loss_on_constant_velocity_corpus():
    rng = np.random.default_rng(0)
    B, T = 48, 10
    v = rng.uniform(-1, 1, size=(B, 1, 7)) * np.array([1, 1, 0, 0, 0, 0, 0])
    gt = np.arange(T)[None, :, None] * v
    obs = gt + rng.normal(size=gt.shape) * 0.05
    data = TrajectoryDataset(obs, np.ones((B, T)), gt)
    params = init_params(VeloLSTMShape(hidden=16, feature=8), seed=0)
    _, curve = train_velolstm(params, data, OptimizerConfig(learning_rate=0.02, epochs=100, batch_size=16))
    assert curve[-1] < 0.2 * curve[0]


# -- per-track motion wrappers -------------------------------------------------


@pytest.mark.parametrize("name", ["kf3d", "momentum", "none"])
def test_models_refine_on_update_and_extrapolate_on_coast(name):
    m = make_motion_factory(name)(obs7())
    for k in range(1, 6):
        m.predict()
        m.update(obs7(x=float(k)))
    pred = m.predict()
    coasted = m.coast()
    assert np.array_equal(pred, coasted)


def test_kalman_lost_track_follows_linear_prediction():
    m = KalmanMotion(obs7())
    for k in range(1, 10):
        m.predict()
        m.update(obs7(x=float(k)))
    v = m.velocity.copy()
    before = m.refined.copy()
    for j in range(1, 4):
        m.predict()
        m.coast()
        np.testing.assert_allclose(m.refined[:3], before[:3] + j * v, atol=1e-12)


def test_no_motion_reports_raw_detection():
    m = NoMotion(obs7())
    m.predict()
    np.testing.assert_array_equal(m.update(obs7(4.0)), obs7(4.0))


def test_velolstm_wrapper_needs_params():
    with pytest.raises(ValueError):
        VeloLSTMMotion(obs7())
    with pytest.raises(ValueError):
        make_motion_factory("velolstm")
    with pytest.raises(ValueError):
        make_motion_factory("telepathy")


def test_velolstm_wrapper_history_grows_only_on_update():
    p = init_params(SMALL, seed=0)
    m = VeloLSTMMotion(obs7(), params=p)
    m.predict()
    m.update(obs7(1.0))
    assert len(m.history) == 1
    m.predict()
    m.coast()
    assert len(m.history) == 1
    assert isinstance(MomentumMotion(obs7()).velocity, np.ndarray)


def test_forward_sequence_starts_at_first_observation():
    obs = np.random.default_rng(1).normal(size=(2, 4, 7))
    pred, ref, _ = forward_sequence(init_params(SMALL), obs, np.ones((2, 4)))
    assert pred.shape == ref.shape == (2, 4, 7)
    assert np.array_equal(pred[:, 0], obs[:, 0]) and np.array_equal(ref[:, 0], obs[:, 0])
