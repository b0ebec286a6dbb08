"""Annotation-error typing for clusters.

Each cluster gets exactly one type, decided by member composition first and
geometry last: prediction-only clusters point at a missing annotation,
annotation-only clusters at a spurious one, class disagreement at a wrong
label, and class agreement with poor overlap at a misplaced box.
"""

from __future__ import annotations

import enum

from .clustering import ClusterRecord
from .geometry import iou

DEFAULT_DELTA = 0.5


class ErrorType(enum.Enum):
    MISSING_LABEL = "missing"
    SPURIOUS_LABEL = "spurious"
    LABEL_ERROR = "label_error"
    LOCATION_ERROR = "location_error"
    CONSISTENT = "consistent"


def classify_cluster(cluster: ClusterRecord, delta: float = DEFAULT_DELTA) -> ErrorType:
    """Assign one error type to a reduced cluster.

    The cases are checked in order, so a cluster holding both a matching
    pair and an odd extra prediction classifies by the matching pair. For
    the location check, each shared class contributes its best ground-truth
    / reduced-prediction pair; the cluster is mislocated only when even the
    best pair falls below ``delta``.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if cluster.pred_members and not cluster.reduced_preds:
        raise ValueError("cluster must be reduced before classification")
    has_gt = bool(cluster.gt_members)
    has_pred = bool(cluster.reduced_preds)
    if not has_gt and not has_pred:
        raise ValueError("cannot classify an empty cluster")
    if not has_gt:
        return ErrorType.MISSING_LABEL
    if not has_pred:
        return ErrorType.SPURIOUS_LABEL

    shared = cluster.gt_classes() & set(cluster.reduced_preds)
    if not shared:
        return ErrorType.LABEL_ERROR
    if best_pair_iou(cluster, shared) < delta:
        return ErrorType.LOCATION_ERROR
    return ErrorType.CONSISTENT


def best_pair_iou(cluster: ClusterRecord, shared: set[int] | None = None) -> float:
    """Best same-class IoU between a ground-truth box and a reduced prediction."""
    if shared is None:
        shared = cluster.gt_classes() & set(cluster.reduced_preds)
    best = 0.0
    for class_id in shared:
        pred = cluster.reduced_preds[class_id]
        for gt in cluster.gt_members:
            if gt.class_id == class_id:
                best = max(best, iou(gt.box, pred.box))
    return best
