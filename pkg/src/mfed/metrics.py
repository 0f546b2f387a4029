"""Reference implementations of the evaluation metrics as pure functions.

Each metric is deliberately written as the plainest possible realization of
its defining formula so the test suite can pit it against brute-force
oracles. All metrics lie in [0, 1] and equal 1 exactly on perfect
predictions.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np


def _validate_label_map(values: np.ndarray, num_classes: int, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise ValueError(f"{what} contains class ids outside [0, {num_classes})")
    return arr


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> float:
    """Mean over classes of |P∩G| / |P∪G|.

    Classes absent from both prediction and ground truth are excluded from
    the mean, which keeps perfect predictions at exactly 1.0 on sparse maps.
    """
    pred = _validate_label_map(pred, num_classes, "pred")
    gt = _validate_label_map(gt, num_classes, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    ious = []
    for c in range(num_classes):
        p = pred == c
        g = gt == c
        union = np.logical_or(p, g).sum()
        if union == 0:
            continue
        ious.append(np.logical_and(p, g).sum() / union)
    if not ious:
        raise ValueError("no class present in either map")
    return float(np.mean(ious))


def average_precision(detections: Sequence[tuple[float, bool]], gt_total: int) -> float:
    """Discrete AP: sum of (R_n - R_{n-1}) * P_n over descending-score ranks."""
    if gt_total < 1:
        raise ValueError("gt_total must be >= 1 (recall undefined otherwise)")
    scores = np.array([s for s, _ in detections], dtype=np.float64)
    if scores.size and not np.isfinite(scores).all():
        raise ValueError("detection scores must be finite")
    flags = np.array([bool(t) for _, t in detections])
    if flags.sum() > gt_total:
        raise ValueError("more true positives than ground-truth instances")
    order = np.argsort(-scores, kind="stable")
    ap = 0.0
    tp = 0
    prev_recall = 0.0
    for rank, i in enumerate(order, start=1):
        if flags[i]:
            tp += 1
        recall = tp / gt_total
        precision = tp / rank
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def _validate_segments(segments: Mapping[int, np.ndarray], what: str) -> dict[int, np.ndarray]:
    out = {}
    total = 0
    seen: list[np.ndarray] = []
    for sid, idx in segments.items():
        idx = np.unique(np.asarray(idx, dtype=np.int64))
        if idx.size == 0:
            raise ValueError(f"{what} segment {sid} is empty")
        out[int(sid)] = idx
        total += idx.size
        seen.append(idx)
    if seen and np.unique(np.concatenate(seen)).size != total:
        raise ValueError(f"{what} segments overlap")
    return out


def panoptic_quality(pred_segments: Mapping[int, np.ndarray],
                     gt_segments: Mapping[int, np.ndarray]) -> tuple[float, float, float]:
    """(PQ, DQ, SQ) with the strict IoU > 0.5 matching rule.

    Segments are given as id -> flat index array and must be disjoint within
    each side. IoU > 0.5 makes matches one-to-one, so no assignment problem
    needs solving.
    """
    pred = _validate_segments(pred_segments, "pred")
    gt = _validate_segments(gt_segments, "gt")
    if not pred and not gt:
        raise ValueError("both sides have no segments")
    tp = 0
    iou_sum = 0.0
    for pid in sorted(pred):
        for gid in sorted(gt):
            inter = np.intersect1d(pred[pid], gt[gid], assume_unique=True).size
            if inter == 0:
                continue
            union = pred[pid].size + gt[gid].size - inter
            iou = inter / union
            if iou > 0.5:
                tp += 1
                iou_sum += iou
    fp = len(pred) - tp
    fn = len(gt) - tp
    denom = tp + 0.5 * fp + 0.5 * fn
    pq = iou_sum / denom
    dq = tp / denom
    sq = iou_sum / tp if tp > 0 else 0.0
    return float(pq), float(dq), float(sq)


def segments_from_label_map(labels: np.ndarray, void: int | None = None) -> dict[int, np.ndarray]:
    """Segments of a flat id-labeled map: one segment per distinct id."""
    flat = np.asarray(labels).ravel()
    out = {}
    for sid in np.unique(flat):
        if void is not None and sid == void:
            continue
        out[int(sid)] = np.flatnonzero(flat == sid)
    return out


def ods_f(per_image: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Dataset-scale optimal F-measure over a shared threshold grid.

    Each item is (thresholded predictions stacked [T, ...], ground truth).
    Counts are pooled over the whole dataset per threshold BEFORE computing
    F = 2PR/(P+R); the best threshold's F is returned. F is 0 when P+R = 0.
    """
    if len(per_image) == 0:
        raise ValueError("empty dataset")
    n_thresholds = np.asarray(per_image[0][0]).shape[0]
    tp = np.zeros(n_thresholds)
    fp = np.zeros(n_thresholds)
    fn = np.zeros(n_thresholds)
    for preds, gt in per_image:
        preds = np.asarray(preds, dtype=bool)
        gt = np.asarray(gt, dtype=bool)
        if preds.shape[0] != n_thresholds:
            raise ValueError("images must share one threshold grid")
        if preds.shape[1:] != gt.shape:
            raise ValueError(
                f"thresholded shape {preds.shape[1:]} != gt shape {gt.shape}"
            )
        flat_gt = gt.ravel()
        for t in range(n_thresholds):
            flat_p = preds[t].ravel()
            tp[t] += np.logical_and(flat_p, flat_gt).sum()
            fp[t] += np.logical_and(flat_p, ~flat_gt).sum()
            fn[t] += np.logical_and(~flat_p, flat_gt).sum()
    best = 0.0
    for t in range(n_thresholds):
        precision = tp[t] / (tp[t] + fp[t]) if tp[t] + fp[t] > 0 else 0.0
        recall = tp[t] / (tp[t] + fn[t]) if tp[t] + fn[t] > 0 else 0.0
        f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        best = max(best, f)
    return float(best)


def threshold_stack(scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Binary predictions for every threshold in the shared grid."""
    scores = np.asarray(scores)
    return np.stack([scores >= t for t in np.asarray(thresholds)])
