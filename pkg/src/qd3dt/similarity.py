"""Contrastive embedding losses over proposal pairs and the track/detection affinity terms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .geometry import BBox2D, iou_2d, wrap_angle


class SimilarityError(ValueError):
    pass


class EmptyNegatives(SimilarityError):
    pass


class EmptySet(SimilarityError):
    pass


class ZeroNormEmbedding(SimilarityError):
    pass


class DimensionMismatch(SimilarityError):
    pass


class ShapeMismatch(SimilarityError):
    pass


LOCATION_MODES = ("state_distance", "legacy_box")
MOTION_MODES = ("motion_aware", "legacy_velocity", "cosine_only", "centroid_only")


@dataclass
class AffinityConfig:
    w_deep: float = 0.5
    location_scale_r: float = 10.0
    motion_scale_r: float = 10.0
    location_mode: str = "state_distance"
    motion_mode: str = "motion_aware"
    lambda_embed: float = 0.25
    yaw_weight: float = 0.0
    dim_weight: float = 0.0
    box_scale_c: float = 100.0  # pixels, legacy_box mode only
    velocity_eps: float = 1e-3  # m/frame
    deep_mode: str = "softmax"

    def __post_init__(self):
        if not 0.0 <= self.w_deep <= 1.0:
            raise ValueError("w_deep must lie in [0, 1]")
        if self.location_scale_r <= 0 or self.motion_scale_r <= 0 or self.box_scale_c <= 0:
            raise ValueError("affinity scales must be positive")
        if self.location_mode not in LOCATION_MODES:
            raise ValueError(f"unknown location_mode {self.location_mode!r}")
        if self.motion_mode not in MOTION_MODES:
            raise ValueError(f"unknown motion_mode {self.motion_mode!r}")
        if self.deep_mode not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown deep_mode {self.deep_mode!r}")


# -- proposal sampling ------------------------------------------------------


@dataclass
class ProposalLabels:
    """Per-proposal labels: identity for positives, -1 for negatives, None if discarded."""

    labels: list

    @property
    def positives(self) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab is not None and lab >= 0]

    @property
    def negatives(self) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == -1]


def sample_proposal_pairs(
    gt_boxes: list[tuple[BBox2D, int]],
    proposals: list[BBox2D],
    pos_iou: float = 0.7,
    neg_iou: float = 0.3,
) -> ProposalLabels:
    """Label proposals by their best IoU against identity-tagged GT boxes."""
    if not 0.0 <= neg_iou < pos_iou <= 1.0:
        raise ValueError("need 0 <= neg_iou < pos_iou <= 1")
    labels = []
    for prop in proposals:
        best, best_id = 0.0, None
        for box, identity in gt_boxes:
            iou = iou_2d(prop, box)
            if iou > best:
                best, best_id = iou, identity
        if best_id is not None and (best > pos_iou or (pos_iou == 1.0 and best == 1.0)):
            labels.append(int(best_id))
        elif best < neg_iou:
            labels.append(-1)
        else:
            labels.append(None)
    return ProposalLabels(labels)


@dataclass
class ProposalPairBatch:
    key_embeddings: np.ndarray  # (K, D)
    ref_embeddings: np.ndarray  # (R, D)
    match_matrix: np.ndarray  # (K, R) of {0, 1}

    def __post_init__(self):
        self.key_embeddings = np.atleast_2d(np.asarray(self.key_embeddings, dtype=float))
        self.ref_embeddings = np.atleast_2d(np.asarray(self.ref_embeddings, dtype=float))
        self.match_matrix = np.atleast_2d(np.asarray(self.match_matrix, dtype=float))
        k, r = len(self.key_embeddings), len(self.ref_embeddings)
        if self.match_matrix.shape != (k, r):
            raise ShapeMismatch(f"match matrix {self.match_matrix.shape} != ({k}, {r})")
        if not np.all((self.match_matrix == 0) | (self.match_matrix == 1)):
            raise ValueError("match matrix entries must be 0 or 1")

    @classmethod
    def from_labels(cls, key_embeddings, key_ids, ref_embeddings, ref_ids) -> "ProposalPairBatch":
        """Build a batch from identity labels; negative labels (-1) never match."""
        key_ids = np.asarray(key_ids)
        ref_ids = np.asarray(ref_ids)
        match = (key_ids[:, None] == ref_ids[None, :]) & (key_ids[:, None] >= 0)
        return cls(key_embeddings, ref_embeddings, match.astype(float))


# -- embedding losses -------------------------------------------------------


def embed_loss_single(target, positive, negatives) -> float:
    target = np.asarray(target, dtype=float)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=float)) if len(negatives) else np.empty((0,))
    if negatives.size == 0:
        raise EmptyNegatives("at least one negative is required")
    pos_logit = float(target @ np.asarray(positive, dtype=float))
    logits = np.concatenate([[pos_logit], negatives @ target])
    return float(logsumexp(logits) - pos_logit)


def embed_loss_multi(target, positives, negatives) -> float:
    if len(positives) == 0 or len(negatives) == 0:
        raise EmptySet("positives and negatives must both be non-empty")
    target = np.asarray(target, dtype=float)
    pos = np.atleast_2d(np.asarray(positives, dtype=float)) @ target
    neg = np.atleast_2d(np.asarray(negatives, dtype=float)) @ target
    gaps = (neg[None, :] - pos[:, None]).ravel()
    return float(logsumexp(np.concatenate([[0.0], gaps])))


def _check_norms(*arrays):
    for arr in arrays:
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0):
            raise ZeroNormEmbedding("cosine similarity needs non-zero embeddings")


def aux_loss(pairs: ProposalPairBatch) -> float:
    K, R = pairs.key_embeddings, pairs.ref_embeddings
    _check_norms(K, R)
    cos = (K / np.linalg.norm(K, axis=1, keepdims=True)) @ (R / np.linalg.norm(R, axis=1, keepdims=True)).T
    return float(np.mean((cos - pairs.match_matrix) ** 2))


def _embed_term_with_grad(pairs: ProposalPairBatch):
    """Mean multi-positive embedding loss over key rows and its gradient wrt the logits."""
    K, R, M = pairs.key_embeddings, pairs.ref_embeddings, pairs.match_matrix
    logits = K @ R.T
    d_logits = np.zeros_like(logits)
    losses = []
    rows = []
    for i in range(len(K)):
        pos = np.flatnonzero(M[i] == 1)
        neg = np.flatnonzero(M[i] == 0)
        if len(pos) == 0 or len(neg) == 0:
            continue
        gaps = logits[i, neg][None, :] - logits[i, pos][:, None]
        loss = logsumexp(np.concatenate([[0.0], gaps.ravel()]))
        w = np.exp(gaps - loss)
        losses.append(loss)
        rows.append((i, pos, neg, w))
    if not losses:
        return 0.0, d_logits
    n = len(losses)
    for i, pos, neg, w in rows:
        d_logits[i, neg] += w.sum(axis=0) / n
        d_logits[i, pos] -= w.sum(axis=1) / n
    return float(np.mean(losses)), d_logits


def similarity_loss(pairs: ProposalPairBatch, lambda_embed: float = 0.25):
    """Weighted embedding loss plus cosine auxiliary loss.

    Returns ``(loss, grad_key, grad_ref)``. The embedding term averages the
    multi-positive loss over key proposals that have at least one positive
    and one negative reference; the auxiliary term averages over all pairs.
    """
    K, R, M = pairs.key_embeddings, pairs.ref_embeddings, pairs.match_matrix
    _check_norms(K, R)
    l_embed, d_logits = _embed_term_with_grad(pairs)
    grad_k = lambda_embed * d_logits @ R
    grad_r = lambda_embed * d_logits.T @ K

    k_norm = np.linalg.norm(K, axis=1, keepdims=True)
    r_norm = np.linalg.norm(R, axis=1, keepdims=True)
    Kn, Rn = K / k_norm, R / r_norm
    cos = Kn @ Rn.T
    l_aux = float(np.mean((cos - M) ** 2))
    G = 2.0 * (cos - M) / M.size
    grad_k += (G @ Rn - (G * cos).sum(axis=1, keepdims=True) * Kn) / k_norm
    grad_r += (G.T @ Kn - (G * cos).sum(axis=0)[:, None] * Rn) / r_norm
    return lambda_embed * l_embed + l_aux, grad_k, grad_r


# -- affinities -------------------------------------------------------------


def _softmax(x, axis):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def affinity_deep(track_embeddings, det_embeddings, mode: str = "softmax") -> np.ndarray:
    """Bi-directional appearance affinity.

    Logits ``F_tracks @ F_dets.T`` are normalized across detections (rows)
    and across tracks (columns) and the two are averaged. ``mode="sigmoid"``
    applies an elementwise logistic instead.
    """
    T = np.atleast_2d(np.asarray(track_embeddings, dtype=float))
    S = np.atleast_2d(np.asarray(det_embeddings, dtype=float))
    if T.size == 0 or S.size == 0:
        raise ValueError("affinity_deep needs non-empty inputs")
    if T.shape[1] != S.shape[1]:
        raise DimensionMismatch(f"embedding dims differ: {T.shape[1]} vs {S.shape[1]}")
    logits = T @ S.T
    if mode == "softmax":
        return 0.5 * (_softmax(logits, axis=1) + _softmax(logits, axis=0))
    if mode == "sigmoid":
        return 1.0 / (1.0 + np.exp(-logits))
    raise ValueError(f"unknown deep affinity mode {mode!r}")


def state_distance(track_state, det_state, config: AffinityConfig) -> float:
    d = float(np.linalg.norm(track_state.position - det_state.position))
    if config.yaw_weight:
        d += config.yaw_weight * abs(wrap_angle(track_state.yaw - det_state.yaw))
    if config.dim_weight:
        d += config.dim_weight * float(np.linalg.norm(track_state.dimensions - det_state.dimensions))
    return d


def affinity_location(track_state, det_state, config: AffinityConfig, track_box: BBox2D | None = None,
                      det_box: BBox2D | None = None) -> float:
    if config.location_mode == "state_distance":
        return float(np.exp(-state_distance(track_state, det_state, config) / config.location_scale_r))
    if track_box is None or det_box is None:
        return 0.0
    l1 = float(np.abs(track_box.as_array() - det_box.as_array()).sum())
    return float(np.exp(-l1 / config.box_scale_c))


def affinity_motion(track_last_position, track_velocity, det_position, config: AffinityConfig) -> float:
    """Motion affinity between a track and a candidate world position.

    ``track_velocity`` is the track's accumulated per-frame motion vector and
    ``track_last_position`` its position on the previous frame. The pseudo
    motion vector is the displacement from that position to the candidate.
    """
    last = np.asarray(track_last_position, dtype=float)
    v_track = np.asarray(track_velocity, dtype=float)
    v_pseudo = np.asarray(det_position, dtype=float) - last
    r = config.motion_scale_r
    a_centroid = float(np.exp(-np.linalg.norm(v_pseudo) / r))
    mode = config.motion_mode
    if mode == "centroid_only":
        return a_centroid
    if mode == "legacy_velocity":
        return float(np.exp(-np.linalg.norm(v_track - v_pseudo) / r))
    speed = np.linalg.norm(v_track)
    if speed < config.velocity_eps:
        # no heading yet: motion term carries no directional information
        return a_centroid if mode == "motion_aware" else 1.0
    pseudo_len = np.linalg.norm(v_pseudo)
    cos = float(v_track @ v_pseudo / (speed * pseudo_len)) if pseudo_len > 0 else 0.0
    w_cos = 0.5 * (1.0 + min(1.0, max(-1.0, cos)))
    if mode == "cosine_only":
        return w_cos
    a_pseudo = float(np.exp(-np.linalg.norm(v_track - v_pseudo) / r))
    return w_cos * a_centroid + (1.0 - w_cos) * a_pseudo


def aggregate_affinity(deep, location, motion, w_deep: float) -> np.ndarray:
    deep, location, motion = (np.asarray(m, dtype=float) for m in (deep, location, motion))
    if not (deep.shape == location.shape == motion.shape):
        raise ShapeMismatch(f"shapes differ: {deep.shape}, {location.shape}, {motion.shape}")
    if not 0.0 <= w_deep <= 1.0:
        raise ValueError("w_deep must lie in [0, 1]")
    return w_deep * deep + (1.0 - w_deep) * motion * location
