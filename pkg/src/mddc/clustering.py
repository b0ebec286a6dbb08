"""Per-image spatial clustering of annotations and predictions.

Clusters are the connected components of the graph whose vertices are all
boxes of one image (ground truth and predictions together) and whose edges
join pairs with IoU at or above the merge threshold. Reduction then keeps
one representative prediction per class inside each cluster. Both steps are
pure per-image functions; images can be processed in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .geometry import GroundTruthBox, PredictedBox, iou

DEFAULT_MERGE_IOU = 0.4


@dataclass
class ClusterRecord:
    """One spatial cluster: member boxes plus per-class reduced predictions."""

    cluster_id: int
    gt_members: list[GroundTruthBox]
    pred_members: list[PredictedBox]
    reduced_preds: dict[int, PredictedBox] = field(default_factory=dict)

    def gt_classes(self) -> set[int]:
        return {gt.class_id for gt in self.gt_members}


def cluster_image(
    gt: list[GroundTruthBox],
    preds: list[PredictedBox],
    merge_iou: float = DEFAULT_MERGE_IOU,
    split_by_class: bool = False,
) -> list[ClusterRecord]:
    """Partition one image's boxes into connected components under IoU.

    Cluster ids are dense from 0, ordered by the minimum input index of
    their members (ground truth first, then predictions). With
    ``split_by_class`` set, two ground-truth boxes only connect when they
    share a class; edges involving a prediction are unrestricted so class
    disagreements still co-cluster and stay detectable.
    """
    if not (0.0 < merge_iou < 1.0):
        raise ValueError(f"merge_iou must be in (0, 1), got {merge_iou}")

    boxes = [(g.box, g.class_id, True) for g in gt] + [(p.box, p.class_id, False) for p in preds]
    n = len(boxes)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        bi, ci, gt_i = boxes[i]
        for j in range(i + 1, n):
            bj, cj, gt_j = boxes[j]
            if split_by_class and gt_i and gt_j and ci != cj:
                continue
            if iou(bi, bj) >= merge_iou:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    roots: dict[int, int] = {}
    clusters: list[ClusterRecord] = []
    for i in range(n):
        root = find(i)
        if root not in roots:
            roots[root] = len(clusters)
            clusters.append(ClusterRecord(len(clusters), [], []))
        cluster = clusters[roots[root]]
        if i < len(gt):
            cluster.gt_members.append(gt[i])
        else:
            cluster.pred_members.append(preds[i - len(gt)])
    return clusters


def reduce_cluster(cluster: ClusterRecord) -> ClusterRecord:
    """Keep the single best prediction per class present in the cluster.

    Best means highest score; score ties prefer the larger IoU with the
    nearest ground-truth member, then the smaller uid. Idempotent, and
    ground-truth members are never touched.
    """
    reduced: dict[int, PredictedBox] = {}
    for pred in cluster.pred_members:
        held = reduced.get(pred.class_id)
        if held is None or _beats(pred, held, cluster):
            reduced[pred.class_id] = pred
    return replace(cluster, reduced_preds=reduced)


def _nearest_gt_iou(pred: PredictedBox, cluster: ClusterRecord) -> float:
    return max((iou(pred.box, gt.box) for gt in cluster.gt_members), default=0.0)


def _beats(challenger: PredictedBox, held: PredictedBox, cluster: ClusterRecord) -> bool:
    a = (challenger.score, _nearest_gt_iou(challenger, cluster))
    b = (held.score, _nearest_gt_iou(held, cluster))
    if a != b:
        return a > b
    return challenger.box_uid < held.box_uid
