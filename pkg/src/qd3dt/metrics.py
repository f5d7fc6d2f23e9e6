"""Tracking evaluation: per-frame GT matching, CLEAR metrics and AMOTA.

Inputs are plain per-frame lists. A ground-truth frame is a list of
``(gt_id, Box3D)``; a prediction frame is a list of ``(track_id, Box3D)`` or
``(track_id, Box3D, score)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D, iou_3d, iou_3d_aligned, iou_bev, wrap_angle

CRITERIA = ("centroid", "iou_3d", "iou_bev")
REPORT_KEYS = ("MOTA", "MOTP_C", "MOTP_O", "MOTP_I", "AMOTA_1", "AMOTA_02", "MT", "PT", "ML", "FP", "FN", "IDS")


class MetricsError(ValueError):
    pass


class DuplicateIds(MetricsError):
    pass


class EmptyGroundTruth(MetricsError):
    pass


class MissingScores(MetricsError):
    pass


@dataclass
class EvalConfig:
    match_criterion: str = "centroid"
    centroid_threshold: float = 2.0  # meters, ground plane
    iou_threshold: float = 0.5
    amota_points: int = 40
    amota_alpha: float = 1.0
    mostly_tracked: float = 0.8
    mostly_lost: float = 0.2

    def __post_init__(self):
        if self.match_criterion not in CRITERIA:
            raise ValueError(f"unknown match_criterion {self.match_criterion!r}")
        if self.centroid_threshold <= 0 or not 0 < self.iou_threshold <= 1:
            raise ValueError("thresholds must be positive")
        if self.amota_points < 2:
            raise ValueError("amota_points must be >= 2")
        if self.amota_alpha <= 0:
            raise ValueError("amota_alpha must be positive")

    @property
    def max_distance(self) -> float:
        if self.match_criterion == "centroid":
            return self.centroid_threshold
        return 1.0 - self.iou_threshold


@dataclass
class FrameMatchResult:
    true_positives: list[tuple[int, int, float]]  # (gt_id, track_id, distance)
    false_positives: int
    false_negatives: int
    id_switches: int
    gt_ids: list[int] = field(default_factory=list)
    yaw_errors: list[float] = field(default_factory=list)  # radians, per TP
    shape_errors: list[float] = field(default_factory=list)  # 1 - aligned IoU, per TP


def pair_distance(gt: Box3D, pred: Box3D, config: EvalConfig) -> float:
    if config.match_criterion == "centroid":
        return float(np.linalg.norm(gt.center_world[:2] - pred.center_world[:2]))
    if config.match_criterion == "iou_3d":
        return 1.0 - iou_3d(gt, pred)
    return 1.0 - iou_bev(gt, pred)


def _check_unique(ids, what):
    if len(set(ids)) != len(ids):
        raise DuplicateIds(f"duplicate {what} ids in frame: {sorted(ids)}")


def _unpack(predicted):
    return [(p[0], p[1]) for p in predicted]


def finish_frame(gt, predicted, pairs, last_match: dict) -> FrameMatchResult:
    """Count errors for a chosen set of ``(gt_id, track_id, distance)`` pairs and update ``last_match``."""
    gt_boxes = dict(gt)
    pred_boxes = dict(predicted)
    ids = 0
    for g, t, _ in pairs:
        if g in last_match and last_match[g] != t:
            ids += 1
        last_match[g] = t
    pairs = sorted(pairs)
    return FrameMatchResult(
        true_positives=pairs,
        false_positives=len(predicted) - len(pairs),
        false_negatives=len(gt) - len(pairs),
        id_switches=ids,
        gt_ids=sorted(gt_boxes),
        yaw_errors=[abs(wrap_angle(gt_boxes[g].orientation_yaw - pred_boxes[t].orientation_yaw)) for g, t, _ in pairs],
        shape_errors=[1.0 - iou_3d_aligned(gt_boxes[g], pred_boxes[t]) for g, t, _ in pairs],
    )


def match_frame(gt, predicted, last_match: dict, config: EvalConfig) -> FrameMatchResult:
    """Match one frame, CLEAR style.

    Correspondences from earlier frames are kept first when still within the
    threshold. The rest are matched greedily by ascending distance, ties
    broken by (gt id, track id). ``last_match`` maps gt id to the last
    matched track id and is updated in place.
    """
    predicted = _unpack(predicted)
    _check_unique([g for g, _ in gt], "gt")
    _check_unique([t for t, _ in predicted], "track")
    limit = config.max_distance
    gt_boxes = dict(gt)
    pred_boxes = dict(predicted)

    pairs = []
    used_gt, used_tr = set(), set()
    for g in sorted(gt_boxes):
        t = last_match.get(g)
        if t is None or t not in pred_boxes or t in used_tr:
            continue
        d = pair_distance(gt_boxes[g], pred_boxes[t], config)
        if d <= limit:
            pairs.append((g, t, d))
            used_gt.add(g)
            used_tr.add(t)

    candidates = []
    for g in sorted(gt_boxes):
        if g in used_gt:
            continue
        for t in sorted(pred_boxes):
            if t in used_tr:
                continue
            d = pair_distance(gt_boxes[g], pred_boxes[t], config)
            if d <= limit:
                candidates.append((d, g, t))
    candidates.sort()
    for d, g, t in candidates:
        if g in used_gt or t in used_tr:
            continue
        pairs.append((g, t, d))
        used_gt.add(g)
        used_tr.add(t)
    return finish_frame(gt, predicted, pairs, last_match)


def evaluate_sequence(gt_frames, pred_frames, config: EvalConfig, matcher=match_frame) -> list[FrameMatchResult]:
    if len(gt_frames) != len(pred_frames):
        raise MetricsError(f"frame count mismatch: {len(gt_frames)} gt vs {len(pred_frames)} predicted")
    last: dict = {}
    return [matcher(g, p, last, config) for g, p in zip(gt_frames, pred_frames)]


@dataclass
class ClearMetrics:
    MOTA: float
    MOTP_C: float
    MOTP_O: float  # degrees
    MOTP_I: float
    MT: int
    PT: int
    ML: int
    FP: int
    FN: int
    IDS: int
    GT: int
    TP: int


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def clear_metrics(results: list[FrameMatchResult], config: EvalConfig = EvalConfig()) -> ClearMetrics:
    gt_total = sum(len(r.gt_ids) for r in results)
    if gt_total == 0:
        raise EmptyGroundTruth("sequence has no ground-truth objects")
    fp = sum(r.false_positives for r in results)
    fn = sum(r.false_negatives for r in results)
    ids = sum(r.id_switches for r in results)
    dists = [d for r in results for _, _, d in r.true_positives]
    yaws = [e for r in results for e in r.yaw_errors]
    shapes = [e for r in results for e in r.shape_errors]

    present: dict[int, int] = {}
    tracked: dict[int, int] = {}
    for r in results:
        for g in r.gt_ids:
            present[g] = present.get(g, 0) + 1
        for g, _, _ in r.true_positives:
            tracked[g] = tracked.get(g, 0) + 1
    mt = pt = ml = 0
    for g, n in present.items():
        frac = tracked.get(g, 0) / n
        if frac >= config.mostly_tracked:
            mt += 1
        elif frac < config.mostly_lost:
            ml += 1
        else:
            pt += 1
    return ClearMetrics(
        MOTA=1.0 - (ids + fp + fn) / gt_total,
        MOTP_C=_mean(dists),
        MOTP_O=math.degrees(_mean(yaws)) if yaws else float("nan"),
        MOTP_I=_mean(shapes),
        MT=mt, PT=pt, ML=ml, FP=fp, FN=fn, IDS=ids, GT=gt_total, TP=len(dists),
    )


# -- AMOTA --------------------------------------------------------------------


@dataclass
class AmotaResult:
    amota: float
    recalls: list[float]  # r = k / (n - 1), k = 0 .. n-1
    mota_r: list[float]  # nan at r = 0, which is excluded from the mean
    thresholds: list[float]  # score threshold per recall point, nan when unreachable


def _scores(pred_frames):
    for frame in pred_frames:
        for p in frame:
            if len(p) < 3 or p[2] is None or not math.isfinite(p[2]):
                raise MissingScores("every prediction needs a finite score for AMOTA")


def mota_at_recall(counts: tuple[int, int, int], recall: float, gt_total: int, alpha: float) -> float:
    ids, fp, fn = counts
    value = 1.0 - alpha * (ids + fp + fn - (1.0 - recall) * gt_total) / (recall * gt_total)
    # thresholds can overshoot the target recall (ceil, tied scores); cap at a perfect score
    return min(1.0, max(0.0, value))


def recall_threshold(tp_scores, recall: float, gt_total: int) -> float | None:
    """Score threshold that keeps enough true positives to reach ``recall``, or None if unreachable."""
    need = max(1, math.ceil(recall * gt_total - 1e-9))
    if need > len(tp_scores):
        return None
    return sorted(tp_scores, reverse=True)[need - 1]


def amota(gt_frames, pred_frames, config: EvalConfig = EvalConfig(), matcher=match_frame,
          alpha: float | None = None) -> AmotaResult:
    """Average MOTA over ``n - 1`` recall points realized by score thresholds.

    The full prediction set is matched once to collect true-positive scores.
    For each recall r the threshold is the ``ceil(r * GT)``-th highest of
    those scores; CLEAR is then recomputed on predictions at or above it.
    """
    _scores(pred_frames)
    alpha = config.amota_alpha if alpha is None else alpha
    gt_total = sum(len(f) for f in gt_frames)
    if gt_total == 0:
        raise EmptyGroundTruth("sequence has no ground-truth objects")
    full = evaluate_sequence(gt_frames, pred_frames, config, matcher)
    score_of = [{p[0]: p[2] for p in frame} for frame in pred_frames]
    tp_scores = [score_of[k][t] for k, r in enumerate(full) for _, t, _ in r.true_positives]

    n = config.amota_points
    recalls, motas, thresholds = [], [], []
    for k in range(n):
        r = k / (n - 1)
        recalls.append(r)
        if k == 0:
            motas.append(float("nan"))
            thresholds.append(float("nan"))
            continue
        thr = recall_threshold(tp_scores, r, gt_total)
        if thr is None:
            motas.append(0.0)
            thresholds.append(float("nan"))
            continue
        kept = [[p for p in frame if p[2] >= thr] for frame in pred_frames]
        res = evaluate_sequence(gt_frames, kept, config, matcher)
        counts = (sum(x.id_switches for x in res), sum(x.false_positives for x in res),
                  sum(x.false_negatives for x in res))
        motas.append(mota_at_recall(counts, r, gt_total, alpha))
        thresholds.append(thr)
    return AmotaResult(float(np.mean(motas[1:])), recalls, motas, thresholds)


# -- report -------------------------------------------------------------------


def build_report(gt_frames, pred_frames, config: EvalConfig = EvalConfig()) -> dict:
    """All fixed report keys in order. Lost-phase filtering is the caller's job."""
    clear = clear_metrics(evaluate_sequence(gt_frames, pred_frames, config), config)
    a1 = amota(gt_frames, pred_frames, config, alpha=1.0)
    a02 = amota(gt_frames, pred_frames, config, alpha=0.2)
    return {
        "MOTA": clear.MOTA, "MOTP_C": clear.MOTP_C, "MOTP_O": clear.MOTP_O, "MOTP_I": clear.MOTP_I,
        "AMOTA_1": a1.amota, "AMOTA_02": a02.amota,
        "MT": clear.MT, "PT": clear.PT, "ML": clear.ML, "FP": clear.FP, "FN": clear.FN, "IDS": clear.IDS,
        "_curve": a1,
    }


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "nan" if math.isnan(v) else f"{v:.6f}"


def format_report(report: dict) -> str:
    return "".join(f"{k} {format_value(report[k])}\n" for k in REPORT_KEYS)


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, value = line.split()
        out[key] = float(value)
    return out
