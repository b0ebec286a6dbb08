"""End-to-end runs over whole snapshots: analyze, then optionally clean.

The analysis stage is a pure map over images (cluster, reduce, score,
type) followed by one global rank-and-prune pass. Cleaning turns the
analysis into per-cluster decisions and folds them into a fresh snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .clustering import DEFAULT_MERGE_IOU, cluster_image, reduce_cluster
from .correction import DEFAULT_TAU, CorrectionDecision, apply_corrections, correct_cluster
from .dataset import DatasetSnapshot
from .errors import DataError
from .error_types import DEFAULT_DELTA, ErrorType, classify_cluster
from .scoring import (
    DEFAULT_ALPHA,
    DEFAULT_PRUNE_MODE,
    DEFAULT_PRUNE_VALUE,
    ScoredCluster,
    rank_and_prune,
    score_cluster,
)


@dataclass(frozen=True)
class RunConfig:
    """Pipeline parameters with their standard defaults."""

    merge_iou: float = DEFAULT_MERGE_IOU
    delta: float = DEFAULT_DELTA
    tau: float = DEFAULT_TAU
    alpha: float = DEFAULT_ALPHA
    prune_mode: str = DEFAULT_PRUNE_MODE
    prune_value: float = DEFAULT_PRUNE_VALUE
    score_classes_only: bool = False
    split_clusters_by_class: bool = False
    min_score_for_removal: float = 0.0
    match_any_type: bool = False


@dataclass(frozen=True)
class AnalyzedCluster:
    image_id: str
    scored: ScoredCluster
    error_type: ErrorType

    def report_row(self) -> dict:
        c = self.scored.cluster
        return {
            "image_id": self.image_id,
            "cluster_id": c.cluster_id,
            "quality_score": self.scored.quality_score,
            "flagged": self.scored.flagged,
            "error_type": self.error_type.value,
            "gt_uids": sorted(gt.box_uid for gt in c.gt_members),
            "pred_uids": sorted(p.box_uid for p in c.pred_members),
        }


def analyze_snapshot(snapshot: DatasetSnapshot, config: RunConfig = RunConfig()) -> list[AnalyzedCluster]:
    """Cluster, score, and type every image; flag via rank-and-prune.

    Requires predictions for every image: detector output must exist (an
    empty prediction list is fine, a missing one is an error).

    Location-typed clusters are always flagged, on top of whatever
    rank-and-prune selects. Their quality score sits near 1 by construction
    (the classes agree and the prediction is confident), so a score gate
    alone would leave every geometry-only error invisible; promoting them
    here keeps reports, decisions, and metrics telling the same story.
    """
    missing = sorted(img.image_id for img in snapshot.images if img.predictions is None)
    if missing:
        raise DataError(f"no predictions for images: {', '.join(missing)}")

    scored_all: list[ScoredCluster] = []
    types: list[ErrorType] = []
    for img in sorted(snapshot.images, key=lambda im: im.image_id):
        clusters = cluster_image(
            img.ground_truth,
            img.predictions,
            merge_iou=config.merge_iou,
            split_by_class=config.split_clusters_by_class,
        )
        for cluster in clusters:
            reduced = reduce_cluster(cluster)
            scored_all.append(
                score_cluster(
                    reduced,
                    snapshot.num_classes,
                    alpha=config.alpha,
                    classes_only=config.score_classes_only,
                    image_id=img.image_id,
                )
            )
            types.append(classify_cluster(reduced, delta=config.delta))

    flagged = rank_and_prune(scored_all, config.prune_mode, config.prune_value)
    out = []
    for s, t in zip(flagged, types):
        if t is ErrorType.LOCATION_ERROR and not s.flagged:
            s = replace(s, flagged=True)
        out.append(AnalyzedCluster(s.image_id, s, t))
    return out


def plan_corrections(
    analyzed: list[AnalyzedCluster], config: RunConfig = RunConfig()
) -> list[CorrectionDecision]:
    decisions: list[CorrectionDecision] = []
    for ac in analyzed:
        decisions.extend(
            correct_cluster(
                ac.scored,
                ac.error_type,
                tau=config.tau,
                min_score_for_removal=config.min_score_for_removal,
            )
        )
    return decisions


def clean_snapshot(
    snapshot: DatasetSnapshot, config: RunConfig = RunConfig()
) -> tuple[DatasetSnapshot, list[CorrectionDecision], list[AnalyzedCluster]]:
    """Analyze and repair a snapshot; returns (corrected, decisions, analysis)."""
    if snapshot.validation:
        raise DataError(
            "refusing to clean a protected validation split: it stays fixed and "
            "is never involved in data cleaning or correction"
        )
    analyzed = analyze_snapshot(snapshot, config)
    decisions = plan_corrections(analyzed, config)
    corrected = apply_corrections(snapshot, decisions)
    return corrected, decisions, analyzed
