"""VeloLSTM: paired prediction / update LSTMs over the 7-dof object state.

Everything is plain numpy with hand-written backprop through time. Shapes use
a leading batch axis throughout; single-track inference runs with batch 1.

Per step ``a`` (with refined state ``s_bar[a-1]`` and a history of the last
``n`` refined velocities):

* P-LSTM encodes the flattened velocity history, runs two LSTM layers and
  decodes a velocity ``s_dot``; the prediction is ``s_bar[a-1] + s_dot``.
* U-LSTM encodes the observation innovation ``s_hat - s_tilde``, the
  predicted motion ``s_tilde - s_bar[a-1]`` and the depth confidence
  (64 features each, 192 concatenated), runs two LSTM layers and decodes a
  correction added to the prediction.

Inputs are expressed relative to the previous state, which keeps the
network translation invariant in world coordinates.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..geometry import wrap_angle

STATE_DIM = 7
YAW = 3
MAGIC = b"VLSTM1"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class VeloLSTMShape:
    hidden: int = 128
    feature: int = 64
    history: int = 5
    state_dim: int = STATE_DIM


def _param_shapes(shape: VeloLSTMShape) -> dict[str, tuple[int, ...]]:
    H, F, n, D = shape.hidden, shape.feature, shape.history, shape.state_dim
    shapes = {}
    for net, in_dim in (("p", F), ("u", 3 * F)):
        shapes[f"{net}.lstm1.wx"] = (in_dim, 4 * H)
        shapes[f"{net}.lstm1.wh"] = (H, 4 * H)
        shapes[f"{net}.lstm1.b"] = (4 * H,)
        shapes[f"{net}.lstm2.wx"] = (H, 4 * H)
        shapes[f"{net}.lstm2.wh"] = (H, 4 * H)
        shapes[f"{net}.lstm2.b"] = (4 * H,)
        shapes[f"{net}.dec1.w"] = (H, F)
        shapes[f"{net}.dec1.b"] = (F,)
        shapes[f"{net}.dec2.w"] = (F, D)
        shapes[f"{net}.dec2.b"] = (D,)
    shapes["p.enc_vel.w"] = (n * D, F)
    shapes["p.enc_vel.b"] = (F,)
    shapes["u.enc_obs.w"] = (D, F)
    shapes["u.enc_obs.b"] = (F,)
    shapes["u.enc_pred.w"] = (D, F)
    shapes["u.enc_pred.b"] = (F,)
    shapes["u.enc_conf.w"] = (1, F)
    shapes["u.enc_conf.b"] = (F,)
    return dict(sorted(shapes.items()))


def init_params(shape: VeloLSTMShape = VeloLSTMShape(), seed: int = 0, output_scale: float = 0.1) -> dict:
    """Uniform(+-1/sqrt(fan)) init, forget-gate bias +1.

    LSTM weights use ``1/sqrt(hidden)``; dense layers use ``1/sqrt(fan_in)``.
    The final decoder layers are scaled by ``output_scale`` so an untrained
    model starts close to a zero-motion / trust-prediction baseline.
    """
    rng = np.random.default_rng(seed)
    H = shape.hidden
    params = {}
    for name, shp in _param_shapes(shape).items():
        if ".lstm" in name:
            bound = 1.0 / np.sqrt(H)
        else:
            bound = 1.0 / np.sqrt(shp[0]) if len(shp) == 2 else 1.0 / np.sqrt(shape.feature)
        arr = rng.uniform(-bound, bound, size=shp)
        if name.endswith(".b"):
            arr = np.zeros(shp)
            if ".lstm" in name:
                arr[H:2 * H] = 1.0
        if ".dec2." in name:
            arr = arr * output_scale
        params[name] = arr
    return params


def zero_params(shape: VeloLSTMShape = VeloLSTMShape()) -> dict:
    return {name: np.zeros(shp) for name, shp in _param_shapes(shape).items()}


def shape_of(params: dict) -> VeloLSTMShape:
    H = params["p.lstm1.wh"].shape[0]
    F = params["p.dec1.w"].shape[1]
    D = params["p.dec2.w"].shape[1]
    n = params["p.enc_vel.w"].shape[0] // D
    return VeloLSTMShape(hidden=H, feature=F, history=n, state_dim=D)


# -- layers -----------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _dense_tanh(params, prefix, x):
    y = np.tanh(x @ params[prefix + ".w"] + params[prefix + ".b"])
    return y, (x, y)


def _dense_tanh_back(params, prefix, cache, dy, grads):
    x, y = cache
    dpre = dy * (1.0 - y * y)
    grads[prefix + ".w"] += x.T @ dpre
    grads[prefix + ".b"] += dpre.sum(axis=0)
    return dpre @ params[prefix + ".w"].T


def _lstm_cell(params, prefix, x, h_prev, c_prev):
    H = h_prev.shape[1]
    z = x @ params[prefix + ".wx"] + h_prev @ params[prefix + ".wh"] + params[prefix + ".b"]
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, g, o, tc)


def _lstm_cell_back(params, prefix, cache, dh, dc, grads):
    x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1
    )
    grads[prefix + ".wx"] += x.T @ dz
    grads[prefix + ".wh"] += h_prev.T @ dz
    grads[prefix + ".b"] += dz.sum(axis=0)
    return dz @ params[prefix + ".wx"].T, dz @ params[prefix + ".wh"].T, dc * f


def _decoder(params, net, h):
    y1, c1 = _dense_tanh(params, f"{net}.dec1", h)
    out = y1 @ params[f"{net}.dec2.w"] + params[f"{net}.dec2.b"]
    return out, (c1, y1)


def _decoder_back(params, net, cache, dout, grads):
    c1, y1 = cache
    grads[f"{net}.dec2.w"] += y1.T @ dout
    grads[f"{net}.dec2.b"] += dout.sum(axis=0)
    dy1 = dout @ params[f"{net}.dec2.w"].T
    return _dense_tanh_back(params, f"{net}.dec1", c1, dy1, grads)


def _two_layer(params, net, x, state):
    (h1, c1), (h2, c2) = state
    h1, c1, k1 = _lstm_cell(params, f"{net}.lstm1", x, h1, c1)
    h2, c2, k2 = _lstm_cell(params, f"{net}.lstm2", h1, h2, c2)
    return h2, ((h1, c1), (h2, c2)), (k1, k2)


def _two_layer_back(params, net, cache, dh_top, carry, grads):
    """Backprop one step of the stacked LSTM; ``carry`` holds (dh, dc) per layer from step a+1."""
    k1, k2 = cache
    (dh1n, dc1n), (dh2n, dc2n) = carry
    dx2, dh2p, dc2p = _lstm_cell_back(params, f"{net}.lstm2", k2, dh_top + dh2n, dc2n, grads)
    dx1, dh1p, dc1p = _lstm_cell_back(params, f"{net}.lstm1", k1, dx2 + dh1n, dc1n, grads)
    return dx1, ((dh1p, dc1p), (dh2p, dc2p))


def zero_state(batch: int, hidden: int):
    z = np.zeros((batch, hidden))
    return ((z, z), (z, z))


# -- single-step API ----------------------------------------------------------


def _wrap_yaw(vec):
    vec = np.array(vec, dtype=float, copy=True)
    vec[..., YAW] = wrap_angle(vec[..., YAW])
    return vec


def _p_step(params, history, state):
    B = history.shape[0]
    feat, enc_cache = _dense_tanh(params, "p.enc_vel", history.reshape(B, -1))
    h, state, lstm_cache = _two_layer(params, "p", feat, state)
    vel, dec_cache = _decoder(params, "p", h)
    return vel, state, (enc_cache, lstm_cache, dec_cache)


def _u_step(params, innovation, motion, confidence, state):
    fo, co = _dense_tanh(params, "u.enc_obs", innovation)
    fp, cp = _dense_tanh(params, "u.enc_pred", motion)
    fc, cc = _dense_tanh(params, "u.enc_conf", confidence.reshape(-1, 1))
    x = np.concatenate([fo, fp, fc], axis=1)
    h, state, lstm_cache = _two_layer(params, "u", x, state)
    corr, dec_cache = _decoder(params, "u", h)
    return corr, state, (co, cp, cc, lstm_cache, dec_cache)


def velolstm_predict(params, prev_refined, velocity_history, hidden=None):
    """Predict the next state from the previous refined state and velocity history.

    ``velocity_history`` is (k, 7) with k <= n, oldest first; it is zero padded
    at the front. Returns ``(predicted, velocity, hidden)`` where
    ``predicted == prev_refined + velocity`` exactly.
    """
    shp = shape_of(params)
    hist = np.zeros((shp.history, shp.state_dim))
    vh = np.asarray(velocity_history, dtype=float).reshape(-1, shp.state_dim)
    if len(vh):
        vh = vh[-shp.history:]
        hist[shp.history - len(vh):] = vh
    if hidden is None:
        hidden = zero_state(1, shp.hidden)
    vel, hidden, _ = _p_step(params, hist[None], hidden)
    vel = vel[0]
    prev = np.asarray(prev_refined, dtype=float)
    return prev + vel, vel, hidden


def velolstm_update(params, observed, confidence, predicted, prev_refined, hidden=None):
    """Fuse an observation with the prediction.

    Returns ``(refined, velocity_entry, hidden)``; ``velocity_entry`` is the
    refined-state delta to append to the track's history.
    """
    shp = shape_of(params)
    if hidden is None:
        hidden = zero_state(1, shp.hidden)
    predicted = np.asarray(predicted, dtype=float)
    prev = np.asarray(prev_refined, dtype=float)
    innovation = _wrap_yaw(np.asarray(observed, dtype=float) - predicted)
    motion = predicted - prev
    corr, hidden, _ = _u_step(params, innovation[None], motion[None], np.array([float(confidence)]), hidden)
    refined = predicted + corr[0]
    velocity = _wrap_yaw(refined - prev)
    refined = _wrap_yaw(refined)
    return refined, velocity, hidden


# -- sequence forward / backward ----------------------------------------------


@dataclass
class LossWeights:
    refine: float = 1.0
    predict: float = 1.0
    linear: float = 0.1


def smooth_l1(x, delta: float = 1.0):
    ax = np.abs(x)
    return np.where(ax < delta, 0.5 * x * x / delta, ax - 0.5 * delta)


def smooth_l1_grad(x, delta: float = 1.0):
    return np.where(np.abs(x) < delta, x / delta, np.sign(x))


def linear_motion_loss(y, dt: float = 1.0) -> float:
    """Mean absolute second difference of a (B, T, D) sequence, per time ``dt``."""
    y = np.asarray(y, dtype=float)
    if y.shape[1] < 3:
        raise SequenceTooShort("linear motion loss needs at least 3 steps")
    second = y[:, 2:] - 2.0 * y[:, 1:-1] + y[:, :-2]
    return float(np.mean(np.abs(second)) / dt)


def _linear_motion_grad(y, dt):
    second = y[:, 2:] - 2.0 * y[:, 1:-1] + y[:, :-2]
    g = np.sign(second) / (second.size * dt)
    dy = np.zeros_like(y)
    dy[:, 2:] += g
    dy[:, 1:-1] -= 2.0 * g
    dy[:, :-2] += g
    return dy


class SequenceTooShort(ValueError):
    pass


def forward_sequence(params, observations, confidences):
    """Unroll over (B, T, 7) observations. ``refined[:, 0]`` is the first observation.

    Returns ``(predicted, refined, caches)`` with ``predicted[:, 0]`` unused
    (set equal to the first observation).
    """
    shp = shape_of(params)
    obs = np.asarray(observations, dtype=float)
    conf = np.asarray(confidences, dtype=float)
    B, T, D = obs.shape
    n = shp.history
    refined = np.zeros((B, T, D))
    predicted = np.zeros((B, T, D))
    refined[:, 0] = obs[:, 0]
    predicted[:, 0] = obs[:, 0]
    velocities = np.zeros((B, T, D))  # velocities[:, k] = refined[k] - refined[k-1], k >= 1
    p_state = zero_state(B, shp.hidden)
    u_state = zero_state(B, shp.hidden)
    caches = []
    for a in range(1, T):
        hist = np.zeros((B, n, D))
        lo = max(1, a - n)
        k = a - lo
        if k:
            hist[:, n - k:] = velocities[:, lo:a]
        vel, p_state, p_cache = _p_step(params, hist, p_state)
        prev = refined[:, a - 1]
        pred = prev + vel
        innovation = _wrap_yaw(obs[:, a] - pred)
        corr, u_state, u_cache = _u_step(params, innovation, vel, conf[:, a], u_state)
        refined[:, a] = pred + corr
        predicted[:, a] = pred
        velocities[:, a] = refined[:, a] - prev
        caches.append((lo, k, p_cache, u_cache))
    return predicted, refined, caches


def motion_losses(predicted, refined, gt, dt: float = 1.0, weights: LossWeights = LossWeights()):
    """Refinement, prediction and linear-motion losses over steps 1..T-1.

    Returns ``(total, {"refine", "predict", "linear"})``. SmoothL1 uses a
    unit transition point; all terms are means over batch, time and state
    components, the yaw residual wrapped to (-pi, pi].
    """
    predicted, refined, gt = (np.asarray(x, dtype=float) for x in (predicted, refined, gt))
    if gt.shape[1] < 3:
        raise SequenceTooShort("sequences need at least 3 steps")
    r_err = _wrap_yaw(refined[:, 1:] - gt[:, 1:])
    p_err = _wrap_yaw(predicted[:, 1:] - gt[:, 1:])
    parts = {
        "refine": float(np.mean(smooth_l1(r_err))),
        "predict": float(np.mean(smooth_l1(p_err))),
        "linear": linear_motion_loss(refined, dt) + (
            linear_motion_loss(predicted[:, 1:], dt) if gt.shape[1] >= 4 else 0.0
        ),
    }
    total = weights.refine * parts["refine"] + weights.predict * parts["predict"] + weights.linear * parts["linear"]
    return total, parts


def motion_loss_grads(predicted, refined, gt, dt: float = 1.0, weights: LossWeights = LossWeights()):
    """Gradients of :func:`motion_losses` w.r.t. the predicted and refined sequences."""
    r_err = _wrap_yaw(refined[:, 1:] - gt[:, 1:])
    p_err = _wrap_yaw(predicted[:, 1:] - gt[:, 1:])
    d_ref = np.zeros_like(refined)
    d_pred = np.zeros_like(predicted)
    d_ref[:, 1:] = weights.refine * smooth_l1_grad(r_err) / r_err.size
    d_pred[:, 1:] = weights.predict * smooth_l1_grad(p_err) / p_err.size
    d_ref += weights.linear * _linear_motion_grad(refined, dt)
    if gt.shape[1] >= 4:
        d_pred[:, 1:] += weights.linear * _linear_motion_grad(predicted[:, 1:], dt)
    return d_pred, d_ref


def loss_and_grad(params, observations, confidences, gt, dt: float = 1.0, weights: LossWeights = LossWeights()):
    """Total unrolled objective, its parts, and gradients w.r.t. every parameter."""
    shp = shape_of(params)
    predicted, refined, caches = forward_sequence(params, observations, confidences)
    gt = np.asarray(gt, dtype=float)
    total, parts = motion_losses(predicted, refined, gt, dt, weights)
    d_pred, d_ref = motion_loss_grads(predicted, refined, gt, dt, weights)
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    B, T, D = refined.shape
    n = shp.history
    d_ref = d_ref.copy()
    zeros = np.zeros((B, shp.hidden))
    p_carry = ((zeros, zeros), (zeros, zeros))
    u_carry = ((zeros, zeros), (zeros, zeros))
    for a in range(T - 1, 0, -1):
        lo, k, p_cache, u_cache = caches[a - 1]
        d_refined_a = d_ref[:, a]
        # refined[a] = pred + corr ; velocities[a] = refined[a] - refined[a-1] (history of later steps
        # has already been folded into d_ref by the steps processed before this one)
        d_corr = d_refined_a
        co, cp, cc, u_lstm, u_dec = u_cache
        dh = _decoder_back(params, "u", u_dec, d_corr, grads)
        dx, u_carry = _two_layer_back(params, "u", u_lstm, dh, u_carry, grads)
        F = shp.feature
        d_innov = _dense_tanh_back(params, "u.enc_obs", co, dx[:, :F], grads)
        d_motion = _dense_tanh_back(params, "u.enc_pred", cp, dx[:, F:2 * F], grads)
        _dense_tanh_back(params, "u.enc_conf", cc, dx[:, 2 * F:], grads)
        d_pred_a = d_pred[:, a] + d_refined_a - d_innov
        d_vel = d_pred_a + d_motion
        d_ref[:, a - 1] += d_pred_a
        enc_cache, p_lstm, p_dec = p_cache
        dh = _decoder_back(params, "p", p_dec, d_vel, grads)
        dx, p_carry = _two_layer_back(params, "p", p_lstm, dh, p_carry, grads)
        d_hist = _dense_tanh_back(params, "p.enc_vel", enc_cache, dx, grads).reshape(B, n, D)
        if k:
            d_v = d_hist[:, n - k:]
            for j, step in enumerate(range(lo, a)):
                d_ref[:, step] += d_v[:, j]
                d_ref[:, step - 1] -= d_v[:, j]
    return total, parts, grads


# -- serialization ------------------------------------------------------------


def save_params(params: dict, path) -> None:
    """Write ``VLSTM1`` + version + shape header + named little-endian float64 tensors."""
    shp = shape_of(params)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IIIII", FORMAT_VERSION, shp.hidden, shp.feature, shp.history, shp.state_dim))
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        key = name.encode("utf-8")
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_params(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ModelFormatError("missing VLSTM1 magic header")
    off = len(MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise ModelFormatError("truncated model file")
        out = struct.unpack_from(fmt, data, off)
        off += size
        return out

    version, hidden, feature, history, state_dim = take("<IIIII")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    expected = _param_shapes(VeloLSTMShape(hidden, feature, history, state_dim))
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (klen,) = take("<H")
        name = data[off:off + klen].decode("utf-8")
        off += klen
        (ndim,) = take("<B")
        dims = take(f"<{ndim}I")
        nbytes = 8 * int(np.prod(dims))
        if off + nbytes > len(data):
            raise ModelFormatError("truncated tensor data")
        params[name] = np.frombuffer(data, dtype="<f8", count=int(np.prod(dims)), offset=off).reshape(dims).astype(float)
        off += nbytes
    if {k: v.shape for k, v in params.items()} != expected:
        raise ModelFormatError("tensor names or shapes do not match the header")
    return params
