"""Cluster quality scoring from label/prediction agreement.

For each cluster we build a binary label vector (which classes the
annotations assert, plus an explicit background entry) and a probability
vector (the best predicted confidence per class, with a background entry
that is 1 exactly when no class has any confidence). Per-entry
self-confidence ``y*p + (1-y)*(1-p)`` measures agreement; the entries are
sorted descending and folded through an exponential moving average, so a
single strongly disagreeing entry drags the final score down. Rank-and-
prune then flags the lowest-quality clusters.

All functions here are pure; flagging in fraction mode is the only global
step and runs after per-image work completes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .clustering import ClusterRecord

DEFAULT_ALPHA = 0.8
DEFAULT_PRUNE_MODE = "threshold"
DEFAULT_PRUNE_VALUE = 0.5


@dataclass(frozen=True)
class ClusterVectors:
    """Pseudo-label and pseudo-probability vectors, length num_classes + 1.

    The final entry is the background slot: labels[-1] is 1 iff no class is
    annotated, probs[-1] is 1 iff every class confidence is 0.
    """

    labels: tuple[float, ...]
    probs: tuple[float, ...]


@dataclass(frozen=True)
class ScoredCluster:
    cluster: ClusterRecord
    vectors: ClusterVectors
    per_label_scores: tuple[float, ...]
    quality_score: float
    flagged: bool = False
    image_id: str = ""


def build_vectors(cluster: ClusterRecord, num_classes: int) -> ClusterVectors:
    """Construct the agreement vectors for a reduced cluster.

    A class with no prediction in the cluster gets probability 0, which is
    what lets unsupported annotations score poorly.
    """
    labels = [0.0] * (num_classes + 1)
    probs = [0.0] * (num_classes + 1)
    for gt in cluster.gt_members:
        labels[gt.class_id] = 1.0
    for class_id, pred in cluster.reduced_preds.items():
        probs[class_id] = pred.score
    if sum(labels[:num_classes]) == 0.0:
        labels[num_classes] = 1.0
    if sum(probs[:num_classes]) == 0.0:
        probs[num_classes] = 1.0
    return ClusterVectors(tuple(labels), tuple(probs))


def self_confidence(vectors: ClusterVectors, classes_only: bool = False) -> tuple[float, ...]:
    """Per-entry agreement score y*p + (1-y)*(1-p), each in [0, 1].

    ``classes_only`` drops the background entry from the scored range.
    """
    pairs = zip(vectors.labels, vectors.probs)
    scores = tuple(y * p + (1.0 - y) * (1.0 - p) for y, p in pairs)
    return scores[:-1] if classes_only else scores


def ema_quality_score(per_label_scores, alpha: float = DEFAULT_ALPHA) -> float:
    """Fold descending-sorted scores through an EMA; returns the final value.

    The recurrence S_t = alpha*s_t + (1-alpha)*S_{t-1} starts at the largest
    score, so with alpha near 1 the smallest scores dominate the result.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    ordered = sorted(per_label_scores, reverse=True)
    if not ordered:
        raise ValueError("cannot score an empty score vector")
    s = ordered[0]
    for value in ordered[1:]:
        s = alpha * value + (1.0 - alpha) * s
    return s


def score_cluster(
    cluster: ClusterRecord,
    num_classes: int,
    alpha: float = DEFAULT_ALPHA,
    classes_only: bool = False,
    image_id: str = "",
) -> ScoredCluster:
    """Vectors, self-confidence, and EMA quality score for one cluster."""
    vectors = build_vectors(cluster, num_classes)
    scores = self_confidence(vectors, classes_only=classes_only)
    quality = ema_quality_score(scores, alpha)
    return ScoredCluster(cluster, vectors, scores, quality, image_id=image_id)


def rank_and_prune(scored: list[ScoredCluster], mode: str, value: float) -> list[ScoredCluster]:
    """Flag low-quality clusters; returns a new list in input order.

    ``threshold`` mode flags quality below the value; ``fraction`` mode
    flags the ceil(value * N) lowest, ties broken by (image_id, cluster_id)
    so repeated runs flag identical sets.
    """
    if mode == "threshold":
        if not (0.0 < value < 1.0):
            raise ValueError(f"threshold must be in (0, 1), got {value}")
        return [replace(s, flagged=s.quality_score < value) for s in scored]
    if mode == "fraction":
        if not (0.0 < value <= 1.0):
            raise ValueError(f"fraction must be in (0, 1], got {value}")
        count = math.ceil(value * len(scored))
        order = sorted(
            range(len(scored)),
            key=lambda i: (scored[i].quality_score, scored[i].image_id, scored[i].cluster.cluster_id),
        )
        chosen = set(order[:count])
        return [replace(s, flagged=i in chosen) for i, s in enumerate(scored)]
    raise ValueError(f"unknown prune mode: {mode!r}")
