import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qd3dt.geometry import BBox2D
from qd3dt.similarity import (
    AffinityConfig,
    DimensionMismatch,
    EmptyNegatives,
    EmptySet,
    ProposalPairBatch,
    ShapeMismatch,
    ZeroNormEmbedding,
    affinity_deep,
    affinity_location,
    affinity_motion,
    aggregate_affinity,
    aux_loss,
    embed_loss_multi,
    embed_loss_single,
    sample_proposal_pairs,
    similarity_loss,
)
from qd3dt.state import ObjectState


def unit(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def test_single_loss_hand_value():
    v = np.array([1.0, 0.0])
    neg = np.array([[0.0, 1.0]])
    # log(1 + exp(0 - 1))
    assert embed_loss_single(v, v, neg) == pytest.approx(math.log(1 + math.exp(-1)))


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(2, 16))
def test_single_equals_multi_with_one_positive(seed, n_neg, dim):
    rng = np.random.default_rng(seed)
    v, pos = unit(rng, dim), unit(rng, dim)
    neg = unit(rng, n_neg, dim)
    assert abs(embed_loss_single(v, pos, neg) - embed_loss_multi(v, [pos], neg)) < 1e-9


def test_losses_stay_finite_for_large_logits():
    v = np.array([100.0, 0.0])
    negs = np.array([[-100.0, 0.0], [0.0, 100.0]])
    assert np.isfinite(embed_loss_single(v, v, negs))
    assert np.isfinite(embed_loss_multi(v, [-v], negs))


def test_loss_errors():
    v = np.ones(3)
    with pytest.raises(EmptyNegatives):
        embed_loss_single(v, v, [])
    with pytest.raises(EmptySet):
        embed_loss_multi(v, [], [v])
    with pytest.raises(ZeroNormEmbedding):
        aux_loss(ProposalPairBatch(np.zeros((1, 3)), np.ones((1, 3)), [[1]]))
    with pytest.raises(ShapeMismatch):
        ProposalPairBatch(np.ones((2, 3)), np.ones((1, 3)), [[1]])


def test_aux_loss_perfect_alignment_is_zero():
    e = np.eye(3)
    assert aux_loss(ProposalPairBatch(e, e, np.eye(3))) == pytest.approx(0.0)


def test_batch_from_labels_ignores_negatives():
    b = ProposalPairBatch.from_labels(np.eye(3), [1, -1, 2], np.eye(3), [1, -1, 5])
    np.testing.assert_array_equal(b.match_matrix, [[1, 0, 0], [0, 0, 0], [0, 0, 0]])


def _fd_check(pairs, lam, h=1e-6):
    _, gk, gr = similarity_loss(pairs, lam)
    worst = 0.0
    for arr, grad in ((pairs.key_embeddings, gk), (pairs.ref_embeddings, gr)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = similarity_loss(pairs, lam)[0]
            arr[idx] = old - h
            down = similarity_loss(pairs, lam)[0]
            arr[idx] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - grad[idx]) / max(abs(num) + abs(grad[idx]), 1e-6))
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_similarity_loss_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    keys = rng.normal(size=(4, 6))
    refs = rng.normal(size=(5, 6))
    ids_k = rng.integers(0, 3, size=4)
    ids_r = rng.integers(0, 3, size=5)
    pairs = ProposalPairBatch.from_labels(keys, ids_k, refs, ids_r)
    assert _fd_check(pairs, 0.25) < 1e-5


def test_sample_proposal_pairs_thresholds():
    gt = [(BBox2D(0, 0, 10, 10), 4)]
    props = [BBox2D(0, 0, 10, 10), BBox2D(0, 0, 10, 8), BBox2D(0, 0, 10, 5), BBox2D(50, 50, 60, 60)]
    labels = sample_proposal_pairs(gt, props)
    # IoUs: 1.0, 0.8, 0.5, 0.0
    assert labels.labels == [4, 4, None, -1]
    assert labels.positives == [0, 1]
    assert labels.negatives == [3]


def test_affinity_deep_softmax_properties():
    rng = np.random.default_rng(0)
    T, S = unit(rng, 3, 8), unit(rng, 4, 8)
    A = affinity_deep(T, S)
    assert A.shape == (3, 4)
    assert np.all((A > 0) & (A < 1))
    # average of a row-stochastic and a column-stochastic matrix
    assert A.sum() == pytest.approx(0.5 * (3 + 4))
    with pytest.raises(DimensionMismatch):
        affinity_deep(T, unit(rng, 2, 5))


def test_affinity_deep_identity_dominant():
    E = np.eye(4) * 5.0
    assert np.array_equal(np.argmax(affinity_deep(E, E), axis=1), np.arange(4))
    sig = affinity_deep(E, E, mode="sigmoid")
    assert sig[0, 0] == pytest.approx(1 / (1 + math.exp(-25)))


def _state(p):
    return ObjectState(p, 0.0, [4.5, 1.8, 1.5], np.ones(4))


def test_affinity_location_state_distance():
    cfg = AffinityConfig()
    assert affinity_location(_state([0, 0, 0]), _state([0, 0, 0]), cfg) == 1.0
    assert affinity_location(_state([0, 0, 0]), _state([10, 0, 0]), cfg) == pytest.approx(math.exp(-1))


def test_affinity_location_legacy_box():
    cfg = AffinityConfig(location_mode="legacy_box", box_scale_c=100.0)
    a, b = BBox2D(0, 0, 10, 10), BBox2D(25, 0, 35, 10)
    assert affinity_location(_state([0, 0, 0]), _state([0, 0, 0]), cfg, a, b) == pytest.approx(math.exp(-0.5))
    assert affinity_location(_state([0, 0, 0]), _state([0, 0, 0]), cfg) == 0.0


def test_motion_affinity_prefers_heading_direction():
    cfg = AffinityConfig()
    last = np.zeros(3)
    vel = np.array([1.0, 0.0, 0.0])
    ahead = affinity_motion(last, vel, [1.0, 0.0, 0.0], cfg)
    behind = affinity_motion(last, vel, [-1.0, 0.0, 0.0], cfg)
    assert ahead > behind
    # perfect continuation: w_cos = 1 and A_centroid = exp(-1/r)
    assert ahead == pytest.approx(math.exp(-0.1))


def test_motion_affinity_static_track_falls_back():
    cfg = AffinityConfig()
    a = affinity_motion(np.zeros(3), np.zeros(3), [3.0, 4.0, 0.0], cfg)
    assert a == pytest.approx(math.exp(-0.5))
    cos_cfg = AffinityConfig(motion_mode="cosine_only")
    assert affinity_motion(np.zeros(3), np.zeros(3), [3.0, 4.0, 0.0], cos_cfg) == 1.0


def test_motion_affinity_modes():
    last, vel, det = np.zeros(3), np.array([1.0, 0, 0]), np.array([0.0, 1.0, 0])
    w = 0.5  # perpendicular
    a_c = math.exp(-1 / 10)
    a_p = math.exp(-math.sqrt(2) / 10)
    assert affinity_motion(last, vel, det, AffinityConfig()) == pytest.approx(w * a_c + (1 - w) * a_p)
    assert affinity_motion(last, vel, det, AffinityConfig(motion_mode="cosine_only")) == pytest.approx(w)
    assert affinity_motion(last, vel, det, AffinityConfig(motion_mode="centroid_only")) == pytest.approx(a_c)
    assert affinity_motion(last, vel, det, AffinityConfig(motion_mode="legacy_velocity")) == pytest.approx(a_p)


def test_aggregate_affinity():
    deep = np.array([[0.8]])
    loc = np.array([[0.5]])
    mot = np.array([[0.4]])
    assert aggregate_affinity(deep, loc, mot, 0.5)[0, 0] == pytest.approx(0.4 + 0.5 * 0.2)
    with pytest.raises(ShapeMismatch):
        aggregate_affinity(deep, np.ones((1, 2)), mot, 0.5)


def test_affinity_config_validation():
    with pytest.raises(ValueError):
        AffinityConfig(w_deep=1.5)
    with pytest.raises(ValueError):
        AffinityConfig(motion_mode="psychic")
