"""Targeted correction of typed annotation errors.

Each error type maps to one repair: spurious annotations are removed,
wrong labels are rewritten to the best prediction's class (geometry kept),
misplaced boxes take the matched prediction's geometry (class kept), and
missing annotations are filled from predictions whose confidence clears the
add threshold tau.

Corrections apply only to clusters that arrive flagged. The analysis layer
is responsible for flagging everything actionable, including location-typed
clusters whose quality score cannot drop (class agreement with a confident
prediction scores near 1 regardless of overlap).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace

from .dataset import DatasetSnapshot, ImageRecord
from .errors import DataError
from .error_types import ErrorType
from .geometry import BoundingBox, GroundTruthBox, iou
from .scoring import ScoredCluster

DEFAULT_TAU = 0.9

logger = logging.getLogger(__name__)


class Action(enum.Enum):
    REMOVE_BOX = "remove"
    RELABEL_BOX = "relabel"
    RELOCATE_BOX = "relocate"
    ADD_BOX = "add"
    NO_ACTION = "none"


@dataclass(frozen=True)
class CorrectionDecision:
    image_id: str
    cluster_id: int
    error_type: ErrorType
    action: Action
    target_uid: str | None = None
    new_class: int | None = None
    new_box: BoundingBox | None = None
    score: float | None = None


def correct_cluster(
    scored: ScoredCluster,
    error_type: ErrorType,
    tau: float = DEFAULT_TAU,
    min_score_for_removal: float = 0.0,
) -> list[CorrectionDecision]:
    """Decisions for one cluster; at least one decision is always emitted.

    ``min_score_for_removal`` is an off-by-default safety valve for
    low-recall detectors: when positive, removals additionally require a
    prediction in the cluster scoring at least that value, and since
    spurious-typed clusters contain no predictions at all this suppresses
    every removal, leaving unsupported annotations flagged in reports but
    untouched on disk.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    cluster = scored.cluster
    image_id = scored.image_id

    def decision(action, **kw):
        return CorrectionDecision(image_id, cluster.cluster_id, error_type, action, **kw)

    if error_type is ErrorType.CONSISTENT or not scored.flagged:
        return [decision(Action.NO_ACTION)]

    if error_type is ErrorType.SPURIOUS_LABEL:
        best_pred = max((p.score for p in cluster.pred_members), default=0.0)
        if min_score_for_removal > 0.0 and best_pred < min_score_for_removal:
            return [decision(Action.NO_ACTION)]
        return [decision(Action.REMOVE_BOX, target_uid=gt.box_uid) for gt in cluster.gt_members]

    if error_type is ErrorType.LABEL_ERROR:
        winner = _best_prediction(cluster)
        if len(cluster.gt_members) > 1:
            logger.warning(
                "relabeling %d boxes in one cluster (%s #%d) to class %d",
                len(cluster.gt_members), image_id, cluster.cluster_id, winner.class_id,
            )
        return [
            decision(Action.RELABEL_BOX, target_uid=gt.box_uid, new_class=winner.class_id)
            for gt in cluster.gt_members
        ]

    if error_type is ErrorType.LOCATION_ERROR:
        out = []
        for class_id in sorted(cluster.gt_classes() & set(cluster.reduced_preds)):
            pred = cluster.reduced_preds[class_id]
            matched = max(
                (gt for gt in cluster.gt_members if gt.class_id == class_id),
                key=lambda gt: iou(gt.box, pred.box),
            )
            out.append(decision(Action.RELOCATE_BOX, target_uid=matched.box_uid, new_box=pred.box))
        return out

    if error_type is ErrorType.MISSING_LABEL:
        adds = [
            decision(Action.ADD_BOX, new_class=pred.class_id, new_box=pred.box, score=pred.score)
            for _, pred in sorted(cluster.reduced_preds.items())
            if pred.score > tau
        ]
        return adds or [decision(Action.NO_ACTION)]

    raise ValueError(f"unhandled error type: {error_type}")


def _best_prediction(cluster):
    """Highest-confidence reduced prediction; ties prefer the smaller class id."""
    return max(cluster.reduced_preds.values(), key=lambda p: (p.score, -p.class_id))


def apply_corrections(
    snapshot: DatasetSnapshot, decisions: list[CorrectionDecision]
) -> DatasetSnapshot:
    """Fold decisions into a new snapshot; the input is never modified.

    Added boxes receive fresh uids; conflicting decisions on one uid or an
    unknown target uid are errors. Snapshots marked as a validation split
    refuse correction outright.
    """
    if snapshot.validation:
        raise DataError(
            "snapshot is a protected validation split: it stays fixed and is "
            "never involved in data cleaning or correction"
        )

    known = {gt.box_uid for img in snapshot.images for gt in img.ground_truth}
    claimed: dict[str, CorrectionDecision] = {}
    for d in decisions:
        if d.action is Action.NO_ACTION:
            continue
        if d.target_uid is not None:
            if d.target_uid not in known:
                raise DataError(f"decision targets unknown box uid: {d.target_uid}")
            prior = claimed.get(d.target_uid)
            if prior is not None:
                raise DataError(
                    f"conflicting decisions for {d.target_uid}: "
                    f"{prior.action.value} vs {d.action.value}"
                )
            claimed[d.target_uid] = d

    adds: dict[str, list[CorrectionDecision]] = {}
    for d in decisions:
        if d.action is Action.ADD_BOX:
            adds.setdefault(d.image_id, []).append(d)

    images = []
    for img in snapshot.images:
        boxes = []
        for gt in img.ground_truth:
            d = claimed.get(gt.box_uid)
            if d is None:
                boxes.append(gt)
            elif d.action is Action.REMOVE_BOX:
                continue
            elif d.action is Action.RELABEL_BOX:
                boxes.append(replace(gt, class_id=d.new_class))
            elif d.action is Action.RELOCATE_BOX:
                boxes.append(replace(gt, box=d.new_box))
        existing = {gt.box_uid for gt in boxes}
        for i, d in enumerate(adds.get(img.image_id, [])):
            uid = f"{img.image_id}:+{i}"
            while uid in existing:
                uid += "+"
            existing.add(uid)
            boxes.append(GroundTruthBox(d.new_box, d.new_class, uid))
        images.append(ImageRecord(img.image_id, boxes, img.predictions))

    return DatasetSnapshot(snapshot.name, list(snapshot.class_names), images)
