"""Correction decisions and their application."""

from __future__ import annotations

from dataclasses import replace

import pytest

from mddc.clustering import cluster_image, reduce_cluster
from mddc.correction import Action, apply_corrections, correct_cluster
from mddc.dataset import DatasetSnapshot
from mddc.errors import DataError
from mddc.error_types import ErrorType, classify_cluster
from mddc.scoring import score_cluster
from conftest import gt, pred


def scored_cluster(gts, preds, image_id="img", flagged=True, merge_iou=0.2):
    clusters = cluster_image(gts, preds, merge_iou=merge_iou)
    assert len(clusters) == 1
    cluster = reduce_cluster(clusters[0])
    s = score_cluster(cluster, num_classes=2, image_id=image_id)
    return replace(s, flagged=flagged), classify_cluster(cluster)


class TestCorrectCluster:
    def test_spurious_removes_each_gt(self):
        scored, kind = scored_cluster([gt(0.5, 0.5, 0.2, 0.2, uid="g0")], [])
        assert kind is ErrorType.SPURIOUS_LABEL
        decisions = correct_cluster(scored, kind)
        assert [(d.action, d.target_uid) for d in decisions] == [(Action.REMOVE_BOX, "g0")]

    def test_label_error_relabels_to_best_prediction(self):
        scored, kind = scored_cluster(
            [gt(0.5, 0.5, 0.2, 0.2, class_id=0, uid="g0")],
            [pred(0.5, 0.5, 0.2, 0.2, class_id=1, score=0.8)],
        )
        assert kind is ErrorType.LABEL_ERROR
        (decision,) = correct_cluster(scored, kind)
        assert decision.action is Action.RELABEL_BOX
        assert decision.target_uid == "g0"
        assert decision.new_class == 1
        assert decision.new_box is None  # geometry untouched

    def test_location_error_relocates_to_prediction(self):
        p = pred(0.6, 0.5, 0.2, 0.2, class_id=0, score=0.7)
        scored, kind = scored_cluster([gt(0.5, 0.5, 0.2, 0.2, uid="g0")], [p])
        assert kind is ErrorType.LOCATION_ERROR
        (decision,) = correct_cluster(scored, kind)
        assert decision.action is Action.RELOCATE_BOX
        assert decision.target_uid == "g0"
        assert decision.new_box == p.box
        assert decision.new_class is None  # class untouched

    def test_unflagged_location_error_is_left_alone(self):
        # the analysis layer promotes location clusters to flagged; the
        # correction itself trusts the flag
        p = pred(0.6, 0.5, 0.2, 0.2, class_id=0, score=1.0)
        scored, kind = scored_cluster([gt(0.5, 0.5, 0.2, 0.2, uid="g0")], [p], flagged=False)
        assert scored.quality_score == 1.0
        (decision,) = correct_cluster(scored, kind)
        assert decision.action is Action.NO_ACTION

    def test_missing_label_adds_above_tau(self):
        p = pred(0.5, 0.5, 0.2, 0.2, class_id=1, score=0.95)
        scored, kind = scored_cluster([], [p])
        assert kind is ErrorType.MISSING_LABEL
        (decision,) = correct_cluster(scored, kind, tau=0.9)
        assert decision.action is Action.ADD_BOX
        assert decision.new_class == 1
        assert decision.new_box == p.box
        assert decision.score == 0.95

    def test_missing_label_below_tau_is_no_action(self):
        scored, kind = scored_cluster([], [pred(0.5, 0.5, 0.2, 0.2, score=0.85)])
        (decision,) = correct_cluster(scored, kind, tau=0.9)
        assert decision.action is Action.NO_ACTION

    def test_consistent_is_no_action(self):
        scored, kind = scored_cluster(
            [gt(0.5, 0.5, 0.2, 0.2)], [pred(0.5, 0.5, 0.2, 0.2, score=1.0)]
        )
        assert kind is ErrorType.CONSISTENT
        (decision,) = correct_cluster(scored, kind)
        assert decision.action is Action.NO_ACTION

    def test_unflagged_cluster_is_no_action(self):
        scored, kind = scored_cluster([gt(0.5, 0.5, 0.2, 0.2, uid="g0")], [], flagged=False)
        (decision,) = correct_cluster(scored, kind)
        assert decision.action is Action.NO_ACTION

    def test_min_score_for_removal_suppresses_unsupported_removals(self):
        scored, kind = scored_cluster([gt(0.5, 0.5, 0.2, 0.2, uid="g0")], [])
        (decision,) = correct_cluster(scored, kind, min_score_for_removal=0.1)
        assert decision.action is Action.NO_ACTION

    def test_bad_tau(self):
        scored, kind = scored_cluster([gt(0.5, 0.5, 0.2, 0.2)], [])
        with pytest.raises(ValueError):
            correct_cluster(scored, kind, tau=1.0)


class TestApplyCorrections:
    def test_empty_decision_list_is_identity(self, small_snapshot):
        out = apply_corrections(small_snapshot, [])
        assert out.snapshot_hash == small_snapshot.snapshot_hash

    def test_remove_decreases_count_by_one(self, small_snapshot):
        target = small_snapshot.images[0].ground_truth[0]
        scored, _ = scored_cluster([target], [], image_id=small_snapshot.images[0].image_id)
        decisions = correct_cluster(scored, ErrorType.SPURIOUS_LABEL)
        out = apply_corrections(small_snapshot, decisions)
        assert out.total_boxes() == small_snapshot.total_boxes() - 1

    def test_input_snapshot_is_untouched(self, small_snapshot):
        hash_before = small_snapshot.snapshot_hash
        boxes_before = small_snapshot.total_boxes()
        target = small_snapshot.images[0].ground_truth[0]
        scored, _ = scored_cluster([target], [], image_id=small_snapshot.images[0].image_id)
        apply_corrections(small_snapshot, correct_cluster(scored, ErrorType.SPURIOUS_LABEL))
        assert small_snapshot.snapshot_hash == hash_before
        assert small_snapshot.total_boxes() == boxes_before

    def test_relabel_preserves_geometry_bit_exact(self, small_snapshot):
        img = small_snapshot.images[0]
        target = img.ground_truth[0]
        p = pred(target.box.cx, target.box.cy, target.box.w, target.box.h,
                 class_id=(target.class_id + 1) % 2, score=0.9)
        scored, kind = scored_cluster([target], [p], image_id=img.image_id)
        out = apply_corrections(small_snapshot, correct_cluster(scored, kind))
        fixed = [g for g in out.image(img.image_id).ground_truth if g.box_uid == target.box_uid]
        assert fixed[0].box == target.box
        assert fixed[0].class_id == p.class_id

    def test_add_brings_fresh_uid(self, small_snapshot):
        img_id = small_snapshot.images[0].image_id
        p = pred(0.95, 0.95, 0.08, 0.08, class_id=1, score=0.99)
        scored, kind = scored_cluster([], [p], image_id=img_id)
        out = apply_corrections(small_snapshot, correct_cluster(scored, kind))
        uids = [g.box_uid for g in out.image(img_id).ground_truth]
        assert len(uids) == len(set(uids))
        assert out.total_boxes() == small_snapshot.total_boxes() + 1

    def test_unknown_uid_is_an_error(self, small_snapshot):
        ghost = gt(0.5, 0.5, 0.1, 0.1, uid="nowhere:9")
        scored, _ = scored_cluster([ghost], [], image_id="img0000")
        with pytest.raises(DataError, match="nowhere:9"):
            apply_corrections(small_snapshot, correct_cluster(scored, ErrorType.SPURIOUS_LABEL))

    def test_conflicting_decisions_are_an_error(self, small_snapshot):
        img = small_snapshot.images[0]
        target = img.ground_truth[0]
        scored, _ = scored_cluster([target], [], image_id=img.image_id)
        remove = correct_cluster(scored, ErrorType.SPURIOUS_LABEL)
        relabel = [replace(remove[0], action=Action.RELABEL_BOX, new_class=1)]
        with pytest.raises(DataError, match="conflicting"):
            apply_corrections(small_snapshot, remove + relabel)

    def test_validation_snapshot_refuses_correction(self, small_snapshot):
        protected = DatasetSnapshot(
            small_snapshot.name, small_snapshot.class_names, small_snapshot.images,
            validation=True,
        )
        with pytest.raises(DataError, match="validation"):
            apply_corrections(protected, [])
