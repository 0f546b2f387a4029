"""Held-out evaluation of task models and the improvement summary math."""

from __future__ import annotations

import numpy as np

from .metrics import (average_precision, miou, ods_f, panoptic_quality,
                      threshold_stack)
from .model import ModelParams, TaskObjective

HIGHER_IS_BETTER = {
    "mse": False,
    "accuracy": True,
    "miou": True,
    "ap": True,
    "pq": True,
    "odsf": True,
}

# Fixed realizations for metrics that need extra structure at desk scale:
# odsf pools counts over pseudo-images of this many samples on a fixed
# probability grid; pq segments a per-position label row into maximal runs.
ODSF_IMAGE_SIZE = 16
ODSF_THRESHOLDS = np.linspace(0.0, 1.0, 21)


def evaluate_task(objective: TaskObjective, params: ModelParams,
                  x: np.ndarray, y: np.ndarray) -> float:
    """Validation metric of one model on one task's held-out data."""
    task = objective.task
    out = objective.predict(params, x)
    if task.metric == "mse":
        d = out - y
        return float(np.mean(d * d))
    if task.metric == "accuracy":
        return float(np.mean(np.argmax(out, axis=1) == y.astype(int)))
    if task.metric == "ap":
        scores = out[:, 1] - out[:, 0]
        detections = [(float(s), bool(t)) for s, t in zip(scores, y.astype(int) == 1)]
        return average_precision(detections, int(np.sum(y.astype(int) == 1)))
    if task.metric == "miou":
        pred = np.argmax(out, axis=-1)
        return miou(pred.ravel(), y.astype(int).ravel(), task.classes)
    if task.metric == "pq":
        pred = np.argmax(out, axis=-1)
        return _pq_over_rows(pred, y.astype(int))
    if task.metric == "odsf":
        prob = _positive_prob(out)
        items = []
        for start in range(0, len(prob), ODSF_IMAGE_SIZE):
            chunk = slice(start, start + ODSF_IMAGE_SIZE)
            items.append((threshold_stack(prob[chunk], ODSF_THRESHOLDS),
                          y[chunk].astype(int) == 1))
        return ods_f(items)
    raise ValueError(f"unknown metric kind {task.metric!r}")


def _positive_prob(logits: np.ndarray) -> np.ndarray:
    d = logits[:, 1] - logits[:, 0]
    return 1.0 / (1.0 + np.exp(-d))


def _pq_over_rows(pred: np.ndarray, gt: np.ndarray) -> float:
    """Panoptic quality over per-position label rows pooled into one domain.

    Each row is segmented into maximal runs of equal class id; rows get
    disjoint index ranges so one matching covers the whole validation set.
    """
    positions = pred.shape[1]
    pred_segs: dict[int, np.ndarray] = {}
    gt_segs: dict[int, np.ndarray] = {}
    next_pred = next_gt = 1
    for row in range(pred.shape[0]):
        offset = row * positions
        for start, end in _runs(pred[row]):
            pred_segs[next_pred] = np.arange(offset + start, offset + end)
            next_pred += 1
        for start, end in _runs(gt[row]):
            gt_segs[next_gt] = np.arange(offset + start, offset + end)
            next_gt += 1
    pq, _dq, _sq = panoptic_quality(pred_segs, gt_segs)
    return pq


def _runs(row: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = 0
    for i in range(1, len(row) + 1):
        if i == len(row) or row[i] != row[start]:
            runs.append((start, i))
            start = i
    return runs


def delta_m_percent(value: float, base: float, metric: str) -> float:
    """Signed relative improvement versus a baseline, in percent.

    Positive means better, regardless of whether the metric is
    higher-is-better (accuracy) or lower-is-better (mse).
    """
    if base == 0:
        if value == base:
            return 0.0
        raise ValueError("baseline metric is zero; relative improvement undefined")
    sign = 1.0 if HIGHER_IS_BETTER[metric] else -1.0
    return float(sign * (value - base) / abs(base) * 100.0 + 0.0)  # drop -0.0


def mean_delta_m(pairs: list[tuple[float, float, str]]) -> float:
    """Mean over tasks of delta_m_percent((value, base, metric))."""
    return float(np.mean([delta_m_percent(v, b, m) for v, b, m in pairs]))


def is_better(a: float, b: float, metric: str) -> bool:
    return a > b if HIGHER_IS_BETTER[metric] else a < b
