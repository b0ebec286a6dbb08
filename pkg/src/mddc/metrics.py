"""Evaluation against the noise ledger and a reference snapshot.

Three views: per-kind recognition rates (was each injected corruption
flagged with the matching error type?), modification outcomes (did each
applied change move the annotations toward the reference?), and box-level
precision/recall/F1 between a candidate snapshot and a reference.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dataset import DatasetSnapshot, diff_snapshots
from .errors import DataError
from .error_types import DEFAULT_DELTA, ErrorType
from .geometry import GroundTruthBox, iou
from .noise import NOISE_KINDS, NoiseLedger
from .pipeline import AnalyzedCluster

# Report column names, one per injected kind.
KIND_COLUMNS = {
    "delete": "missing_boxes",
    "spurious": "spurious_boxes",
    "relocate": "mislocated_boxes",
    "relabel": "mislabeled_categories",
}
KIND_TO_ERROR = {
    "delete": ErrorType.MISSING_LABEL,
    "spurious": ErrorType.SPURIOUS_LABEL,
    "relocate": ErrorType.LOCATION_ERROR,
    "relabel": ErrorType.LABEL_ERROR,
}


@dataclass
class RecognitionReport:
    """Per-kind recognition percentages plus a kind-vs-assigned-type matrix.

    Kinds with no injected events report None. The confusion matrix rows
    are injected kinds; columns are the five error types, where a
    corruption whose cluster went unflagged (or, for deletions, left no
    covering cluster) counts under "consistent".
    """

    per_type: dict[str, float | None]
    average_accuracy: float | None
    confusion: dict[str, dict[str, int]]
    injected: dict[str, int]


@dataclass
class ModificationReport:
    """Outcome counts for the changes between two snapshot versions.

    ``ineffective`` follows the quirky but fixed definition: annotations
    that were already correct against the reference and were left
    untouched. It counts preserved annotations, not applied changes.
    """

    total_modified: int
    correct: int
    incorrect: int
    ineffective: int


def score_recognition(
    ledger: NoiseLedger,
    analyzed: list[AnalyzedCluster],
    delta: float = DEFAULT_DELTA,
    match_any_type: bool = False,
) -> RecognitionReport:
    """Check every ledger entry against the flagged, typed clusters.

    A corruption is recognized when a flagged cluster contains its box (for
    deletions: covers the deleted location at IoU >= delta) and carries the
    matching error type; ``match_any_type`` drops the type requirement.
    """
    uid_cluster: dict[str, AnalyzedCluster] = {}
    by_image: dict[str, list[AnalyzedCluster]] = {}
    for ac in analyzed:
        by_image.setdefault(ac.image_id, []).append(ac)
        for gt in ac.scored.cluster.gt_members:
            uid_cluster[gt.box_uid] = ac

    confusion = {kind: {e.value: 0 for e in ErrorType} for kind in NOISE_KINDS}
    injected = {kind: 0 for kind in NOISE_KINDS}
    recognized = {kind: 0 for kind in NOISE_KINDS}

    for entry in ledger.entries:
        injected[entry.kind] += 1
        if entry.kind == "delete":
            cluster = _best_flagged_cover(by_image.get(entry.image_id, []), entry.original, delta)
        else:
            cluster = uid_cluster.get(entry.corrupted.box_uid)
            if cluster is None:
                raise DataError(
                    f"ledger box {entry.corrupted.box_uid} not found in the analyzed snapshot"
                )
            if not cluster.scored.flagged:
                cluster = None
        if cluster is None:
            confusion[entry.kind][ErrorType.CONSISTENT.value] += 1
            continue
        confusion[entry.kind][cluster.error_type.value] += 1
        if match_any_type and cluster.error_type is not ErrorType.CONSISTENT:
            recognized[entry.kind] += 1
        elif cluster.error_type is KIND_TO_ERROR[entry.kind]:
            recognized[entry.kind] += 1

    per_type: dict[str, float | None] = {}
    rates = []
    for kind in NOISE_KINDS:
        column = KIND_COLUMNS[kind]
        if injected[kind] == 0:
            per_type[column] = None
        else:
            per_type[column] = 100.0 * recognized[kind] / injected[kind]
            rates.append(per_type[column])
    average = sum(rates) / len(rates) if rates else None
    return RecognitionReport(per_type, average, confusion, injected)


def _best_flagged_cover(clusters, deleted: GroundTruthBox, delta: float):
    """Flagged cluster best covering the deleted box's location, if any.

    A flagged cluster with the matching (missing) type wins over an equally
    covering flagged cluster of another type.
    """
    best, best_key = None, (-1.0, False)
    for ac in clusters:
        if not ac.scored.flagged:
            continue
        c = ac.scored.cluster
        members = [gt.box for gt in c.gt_members] + [p.box for p in c.pred_members]
        cover = max((iou(deleted.box, b) for b in members), default=0.0)
        if cover < delta:
            continue
        key = (cover, ac.error_type is ErrorType.MISSING_LABEL)
        if (key[1], key[0]) > (best_key[1], best_key[0]):
            best, best_key = ac, key
    return best


def score_modifications(
    before: DatasetSnapshot,
    after: DatasetSnapshot,
    reference: DatasetSnapshot,
    delta: float = DEFAULT_DELTA,
) -> ModificationReport:
    """Judge each before->after change against the reference.

    A change is correct when it increases agreement with the reference: an
    edit whose result matches a reference annotation its old version did
    not, a removal of a box no reference annotation supports, or an
    addition matching a reference annotation nothing in ``before`` matched.
    """
    if before.class_names != reference.class_names or after.class_names != reference.class_names:
        raise DataError("snapshots have different class lists")

    diff = diff_snapshots(before, after)
    ref_by_image = {img.image_id: img.ground_truth for img in reference.images}
    before_by_image = {img.image_id: img.ground_truth for img in before.images}

    def matches(image_id: str, class_id: int, box) -> list[int]:
        refs = ref_by_image.get(image_id, [])
        return [
            i for i, r in enumerate(refs)
            if r.class_id == class_id and iou(r.box, box) >= delta
        ]

    correct = incorrect = 0

    for image_id, gt in diff.removed:
        if matches(image_id, gt.class_id, gt.box):
            incorrect += 1
        else:
            correct += 1

    for image_id, gt in diff.added:
        hit = _newly_matched(matches(image_id, gt.class_id, gt.box),
                             ref_by_image.get(image_id, []),
                             before_by_image.get(image_id, []), delta)
        correct += hit
        incorrect += 1 - hit

    for image_id, uid, _old_class, new_class in diff.relabeled:
        old = _find_uid(before_by_image.get(image_id, []), uid)
        now_ok = bool(matches(image_id, new_class, old.box))
        was_ok = bool(matches(image_id, old.class_id, old.box))
        if now_ok and not was_ok:
            correct += 1
        else:
            incorrect += 1

    for image_id, uid, old_box, new_box in diff.relocated:
        old = _find_uid(before_by_image.get(image_id, []), uid)
        now_ok = bool(matches(image_id, old.class_id, new_box))
        was_ok = bool(matches(image_id, old.class_id, old_box))
        if now_ok and not was_ok:
            correct += 1
        else:
            incorrect += 1

    ineffective = _count_untouched_correct(before, after, reference, delta)
    return ModificationReport(diff.total(), correct, incorrect, ineffective)


def _find_uid(boxes, uid):
    for gt in boxes:
        if gt.box_uid == uid:
            return gt
    raise DataError(f"diff references unknown uid {uid}")


def _newly_matched(ref_hits, refs, before_boxes, delta) -> int:
    """1 when some matched reference annotation had no match in `before`."""
    for i in ref_hits:
        r = refs[i]
        already = any(
            b.class_id == r.class_id and iou(b.box, r.box) >= delta for b in before_boxes
        )
        if not already:
            return 1
    return 0


def _count_untouched_correct(before, after, reference, delta) -> int:
    after_by_image = {img.image_id: {gt.box_uid: gt for gt in img.ground_truth}
                      for img in after.images}
    ref_by_image = {img.image_id: img.ground_truth for img in reference.images}
    count = 0
    for img in before.images:
        kept = after_by_image.get(img.image_id, {})
        refs = ref_by_image.get(img.image_id, [])
        for gt in img.ground_truth:
            survivor = kept.get(gt.box_uid)
            if survivor is None or survivor.class_id != gt.class_id or survivor.box != gt.box:
                continue
            if any(r.class_id == gt.class_id and iou(r.box, gt.box) >= delta for r in refs):
                count += 1
    return count


def box_prf(
    candidate: DatasetSnapshot,
    reference: DatasetSnapshot,
    iou_threshold: float = DEFAULT_DELTA,
) -> tuple[float, float, float]:
    """Greedy same-class matching; returns (precision, recall, f1).

    Conventions for empty sides: an empty candidate has precision 1, an
    empty reference has recall 1.
    """
    if candidate.class_names != reference.class_names:
        raise DataError("snapshots have different class lists")
    cand_by_image = {img.image_id: img.ground_truth for img in candidate.images}
    ref_by_image = {img.image_id: img.ground_truth for img in reference.images}

    matched = 0
    n_cand = sum(len(v) for v in cand_by_image.values())
    n_ref = sum(len(v) for v in ref_by_image.values())

    for image_id in sorted(set(cand_by_image) | set(ref_by_image)):
        cands = cand_by_image.get(image_id, [])
        refs = ref_by_image.get(image_id, [])
        pairs = []
        for i, c in enumerate(cands):
            for j, r in enumerate(refs):
                if c.class_id != r.class_id:
                    continue
                value = iou(c.box, r.box)
                if value >= iou_threshold:
                    pairs.append((-value, i, j))
        pairs.sort()
        used_c, used_r = set(), set()
        for _, i, j in pairs:
            if i in used_c or j in used_r:
                continue
            used_c.add(i)
            used_r.add(j)
            matched += 1

    precision = matched / n_cand if n_cand else 1.0
    recall = matched / n_ref if n_ref else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1
