"""Quality scoring: vectors, self-confidence, EMA, rank-and-prune."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mddc.clustering import cluster_image, reduce_cluster
from mddc.scoring import (
    ClusterVectors,
    build_vectors,
    ema_quality_score,
    rank_and_prune,
    score_cluster,
    self_confidence,
)
from conftest import gt, pred
from oracles import transcribed_quality_score


def reduced_cluster(gts, preds, merge_iou=0.2):
    clusters = cluster_image(gts, preds, merge_iou=merge_iou)
    assert len(clusters) == 1, "test cluster construction must yield one cluster"
    return reduce_cluster(clusters[0])


class TestBuildVectors:
    def test_gt_only_cluster(self):
        cluster = reduced_cluster([gt(0.5, 0.5, 0.2, 0.2, class_id=0)], [])
        v = build_vectors(cluster, num_classes=2)
        assert v.labels == (1.0, 0.0, 0.0)
        assert v.probs == (0.0, 0.0, 1.0)

    def test_pred_only_cluster(self):
        cluster = reduced_cluster([], [pred(0.5, 0.5, 0.2, 0.2, class_id=1, score=0.95)])
        v = build_vectors(cluster, num_classes=2)
        assert v.labels == (0.0, 0.0, 1.0)
        assert v.probs == (0.0, 0.95, 0.0)

    def test_agreeing_cluster(self):
        cluster = reduced_cluster(
            [gt(0.5, 0.5, 0.2, 0.2, class_id=0)],
            [pred(0.5, 0.5, 0.2, 0.2, class_id=0, score=0.9)],
        )
        v = build_vectors(cluster, num_classes=2)
        assert v.labels == (1.0, 0.0, 0.0)
        assert v.probs == (0.9, 0.0, 0.0)


class TestSelfConfidence:
    def test_agreeing_case(self):
        v = ClusterVectors(labels=(1.0,), probs=(0.9,))
        assert self_confidence(v) == (0.9,)

    def test_missing_annotation_case(self):
        v = ClusterVectors(labels=(0.0,), probs=(0.95,))
        assert self_confidence(v)[0] == pytest.approx(0.05)

    def test_spurious_annotation_case(self):
        v = ClusterVectors(labels=(1.0,), probs=(0.0,))
        assert self_confidence(v) == (0.0,)

    def test_classes_only_drops_background(self):
        v = ClusterVectors(labels=(1.0, 0.0, 0.0), probs=(0.9, 0.0, 0.0))
        assert len(self_confidence(v, classes_only=True)) == 2

    def test_classes_only_changes_unsupported_gt_score(self):
        # annotation with no prediction, M=2: background entry scores 0 and
        # dominates the EMA; dropping it leaves [0, 1] -> 0.2
        cluster = reduced_cluster([gt(0.5, 0.5, 0.2, 0.2, class_id=0)], [])
        full = score_cluster(cluster, num_classes=2)
        classes_only = score_cluster(cluster, num_classes=2, classes_only=True)
        assert full.quality_score == pytest.approx(0.04)
        assert classes_only.quality_score == pytest.approx(0.2)

    def test_perfect_agreement_scores_one_everywhere(self):
        v = ClusterVectors(labels=(1.0, 0.0, 0.0), probs=(1.0, 0.0, 0.0))
        assert self_confidence(v) == (1.0, 1.0, 1.0)


class TestEmaQualityScore:
    def test_single_score(self):
        assert ema_quality_score([0.7], alpha=0.8) == 0.7

    def test_two_scores(self):
        # sorted [0.9, 0.5]; 0.8*0.5 + 0.2*0.9 = 0.58
        assert ema_quality_score([0.5, 0.9], alpha=0.8) == pytest.approx(0.58)

    def test_three_scores(self):
        # S2 = 0.58, then 0.8*0.1 + 0.2*0.58 = 0.196
        assert ema_quality_score([0.9, 0.5, 0.1], alpha=0.8) == pytest.approx(0.196)

    def test_empty_vector_is_an_error(self):
        with pytest.raises(ValueError):
            ema_quality_score([], alpha=0.8)

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            ema_quality_score([0.5], alpha=0.0)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.randoms())
    @settings(max_examples=100)
    def test_permutation_invariant(self, scores, pyrandom):
        shuffled = list(scores)
        pyrandom.shuffle(shuffled)
        assert ema_quality_score(scores, 0.8) == pytest.approx(ema_quality_score(shuffled, 0.8))

    def test_lowering_any_score_never_raises_quality(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            scores = rng.random(size=int(rng.integers(1, 7))).tolist()
            base = ema_quality_score(scores, 0.8)
            i = int(rng.integers(len(scores)))
            lowered = list(scores)
            lowered[i] = lowered[i] * rng.random()
            assert ema_quality_score(lowered, 0.8) <= base + 1e-12


class TestScoreCluster:
    def test_perfect_cluster_scores_one(self):
        cluster = reduced_cluster(
            [gt(0.5, 0.5, 0.2, 0.2, class_id=1)],
            [pred(0.5, 0.5, 0.2, 0.2, class_id=1, score=1.0)],
        )
        scored = score_cluster(cluster, num_classes=3)
        assert scored.quality_score == 1.0

    def test_matches_straight_line_transcription_on_500_random_clusters(self):
        rng = np.random.default_rng(123)
        for _ in range(500):
            m = int(rng.integers(1, 5))
            gts = [
                gt(0.5, 0.5, 0.4, 0.4, class_id=int(rng.integers(m)), uid=f"g{i}")
                for i in range(int(rng.integers(0, 3)))
            ]
            preds = [
                pred(0.5, 0.5, 0.4, 0.4, class_id=int(rng.integers(m)),
                     score=float(rng.random()), uid=f"p{i}")
                for i in range(int(rng.integers(0, 4)))
            ]
            if not gts and not preds:
                continue
            cluster = reduced_cluster(gts, preds)
            alpha = float(rng.uniform(0.05, 1.0))
            scored = score_cluster(cluster, num_classes=m, alpha=alpha)
            expected = transcribed_quality_score(
                [g.class_id for g in gts],
                {c: p.score for c, p in cluster.reduced_preds.items()},
                num_classes=m,
                alpha=alpha,
            )
            assert scored.quality_score == pytest.approx(expected, abs=1e-12)


class TestRankAndPrune:
    def make_scored(self, qualities):
        scored = []
        for i, q in enumerate(qualities):
            cluster = reduced_cluster([gt(0.5, 0.5, 0.2, 0.2, uid=f"g{i}")], [])
            s = score_cluster(cluster, num_classes=2, image_id=f"img{i}")
            scored.append(replace(s, quality_score=q))
        return scored

    def test_threshold_mode(self):
        scored = self.make_scored([0.58, 0.196, 0.9])
        flagged = rank_and_prune(scored, "threshold", 0.5)
        assert [s.flagged for s in flagged] == [False, True, False]

    def test_fraction_one_flags_everything(self):
        scored = self.make_scored([0.3, 0.6, 0.9])
        assert all(s.flagged for s in rank_and_prune(scored, "fraction", 1.0))

    def test_fraction_flags_ceiling(self):
        scored = self.make_scored([0.9, 0.2, 0.6])
        flagged = rank_and_prune(scored, "fraction", 0.33)
        assert [s.flagged for s in flagged] == [False, True, False]

    def test_fraction_ties_break_by_image_then_cluster(self):
        scored = self.make_scored([0.5, 0.5, 0.5])
        flagged = rank_and_prune(scored, "fraction", 0.34)
        assert [s.flagged for s in flagged] == [True, True, False]

    def test_invalid_values(self):
        scored = self.make_scored([0.5])
        with pytest.raises(ValueError):
            rank_and_prune(scored, "threshold", 1.0)
        with pytest.raises(ValueError):
            rank_and_prune(scored, "fraction", 0.0)
        with pytest.raises(ValueError):
            rank_and_prune(scored, "percentile", 0.5)

    def test_perfect_cluster_never_flagged_below_one(self):
        cluster = reduced_cluster(
            [gt(0.5, 0.5, 0.2, 0.2)], [pred(0.5, 0.5, 0.2, 0.2, score=1.0)]
        )
        scored = score_cluster(cluster, num_classes=2)
        for threshold in (0.1, 0.5, 0.9, 0.999999):
            assert not rank_and_prune([scored], "threshold", threshold)[0].flagged
