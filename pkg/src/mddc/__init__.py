"""Model-driven data correction for object-detection annotations.

Scores the consistency between annotations and detector predictions via
IoU clustering and self-confidence, types annotation errors (missing,
spurious, wrong label, wrong location), applies targeted corrections, and
ships the evaluation harness (noise injection, recognition metrics,
modification outcomes, snapshot versioning) to measure the whole loop.
"""

from .clustering import ClusterRecord, cluster_image, reduce_cluster
from .correction import Action, CorrectionDecision, apply_corrections, correct_cluster
from .dataset import (
    DatasetSnapshot,
    ImageRecord,
    SnapshotDiff,
    apply_diff,
    diff_snapshots,
    load_snapshot,
    save_snapshot,
)
from .errors import DataError
from .error_types import ErrorType, classify_cluster
from .geometry import BoundingBox, GroundTruthBox, PredictedBox, iou, iou_distance
from .metrics import ModificationReport, RecognitionReport, box_prf, score_modifications, score_recognition
from .noise import NoiseLedger, NoiseSpec, inject_noise, relocate_box, revert_noise
from .oracle import OracleConfig, exact_oracle, generate_predictions
from .pipeline import AnalyzedCluster, RunConfig, analyze_snapshot, clean_snapshot
from .scoring import (
    ClusterVectors,
    ScoredCluster,
    build_vectors,
    ema_quality_score,
    rank_and_prune,
    score_cluster,
    self_confidence,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AnalyzedCluster",
    "BoundingBox",
    "ClusterRecord",
    "ClusterVectors",
    "CorrectionDecision",
    "DataError",
    "DatasetSnapshot",
    "ErrorType",
    "GroundTruthBox",
    "ImageRecord",
    "ModificationReport",
    "NoiseLedger",
    "NoiseSpec",
    "OracleConfig",
    "PredictedBox",
    "RecognitionReport",
    "RunConfig",
    "ScoredCluster",
    "SnapshotDiff",
    "analyze_snapshot",
    "apply_corrections",
    "apply_diff",
    "box_prf",
    "build_vectors",
    "classify_cluster",
    "clean_snapshot",
    "cluster_image",
    "correct_cluster",
    "diff_snapshots",
    "ema_quality_score",
    "exact_oracle",
    "generate_predictions",
    "inject_noise",
    "iou",
    "iou_distance",
    "load_snapshot",
    "rank_and_prune",
    "reduce_cluster",
    "relocate_box",
    "revert_noise",
    "save_snapshot",
    "score_cluster",
    "score_modifications",
    "score_recognition",
    "self_confidence",
]
