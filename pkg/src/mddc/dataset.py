"""Snapshot loading, byte-stable saving, content hashing, and diffing.

A snapshot is an immutable view of one labeled image set. Its hash is a
sha256 digest over the canonical serialization of the class list and the
per-image annotation content (6-decimal fixed precision, sorted lines), so
two snapshots hash equal exactly when they would serialize identically.
Predictions, snapshot name, and box uids do not participate in the hash.

On-disk layout written by :func:`save_snapshot`::

    out/
      classes.txt          one class name per line, line index = class id
      labels/<id>.txt      lines "class_id cx cy w h"
      predictions/<id>.txt lines "class_id cx cy w h score"  (when present)
      manifest.json        name, classes, per-file digests, snapshot hash
      .validation          marker file, only for protected validation splits
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DataError
from .geometry import BoundingBox, GroundTruthBox, PredictedBox, clip_box, iou

PRECISION = 6
VALIDATION_MARKER = ".validation"

# Fallback matching bar for diffing across snapshots that lost uid identity:
# at 6-decimal precision a surviving annotation re-reads at IoU ~ 1.
DIFF_MATCH_IOU = 0.99


def fmt(x: float) -> str:
    """Fixed 6-decimal rendering used for every float written to disk."""
    return f"{x:.{PRECISION}f}"


@dataclass
class ImageRecord:
    """One image's annotations plus, optionally, detector predictions."""

    image_id: str
    ground_truth: list[GroundTruthBox]
    predictions: list[PredictedBox] | None = None


@dataclass
class DatasetSnapshot:
    name: str
    class_names: list[str]
    images: list[ImageRecord]
    snapshot_hash: str = ""
    validation: bool = False

    def __post_init__(self):
        if not self.class_names:
            raise DataError("class list is empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise DataError("class names are not unique")
        seen_images: set[str] = set()
        seen_uids: set[str] = set()
        for img in self.images:
            if img.image_id in seen_images:
                raise DataError(f"duplicate image id: {img.image_id}")
            seen_images.add(img.image_id)
            for gt in img.ground_truth:
                if gt.class_id >= len(self.class_names):
                    raise DataError(
                        f"{img.image_id}/{gt.box_uid}: class id {gt.class_id} "
                        f"outside [0, {len(self.class_names)})"
                    )
                if gt.box_uid in seen_uids:
                    raise DataError(f"duplicate box uid: {gt.box_uid}")
                seen_uids.add(gt.box_uid)
        if not self.snapshot_hash:
            self.snapshot_hash = compute_snapshot_hash(self)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def total_boxes(self) -> int:
        return sum(len(img.ground_truth) for img in self.images)

    def image(self, image_id: str) -> ImageRecord:
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise KeyError(image_id)


@dataclass
class SnapshotDiff:
    """Annotation-level difference between two snapshots.

    A box whose uid survives with both class and geometry changed is
    reported as removed + added rather than split across the relabeled and
    relocated lists.
    """

    added: list[tuple[str, GroundTruthBox]] = field(default_factory=list)
    removed: list[tuple[str, GroundTruthBox]] = field(default_factory=list)
    relabeled: list[tuple[str, str, int, int]] = field(default_factory=list)
    relocated: list[tuple[str, str, BoundingBox, BoundingBox]] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.relabeled or self.relocated)

    def total(self) -> int:
        return len(self.added) + len(self.removed) + len(self.relabeled) + len(self.relocated)


def _box_sort_key(gt: GroundTruthBox) -> tuple:
    b = gt.box
    return (gt.class_id, fmt(b.cx), fmt(b.cy), fmt(b.w), fmt(b.h))


def _gt_line(gt: GroundTruthBox) -> str:
    b = gt.box
    return f"{gt.class_id} {fmt(b.cx)} {fmt(b.cy)} {fmt(b.w)} {fmt(b.h)}"


def _pred_line(p: PredictedBox) -> str:
    b = p.box
    return f"{p.class_id} {fmt(b.cx)} {fmt(b.cy)} {fmt(b.w)} {fmt(b.h)} {fmt(p.score)}"


def label_file_text(img: ImageRecord) -> str:
    lines = sorted(_gt_line(gt) for gt in img.ground_truth)
    return "".join(line + "\n" for line in lines)


def prediction_file_text(img: ImageRecord) -> str:
    lines = sorted(_pred_line(p) for p in img.predictions or [])
    return "".join(line + "\n" for line in lines)


def compute_snapshot_hash(snapshot: DatasetSnapshot) -> str:
    h = hashlib.sha256()
    h.update("classes\n".encode())
    for name in snapshot.class_names:
        h.update(f"{name}\n".encode())
    for img in sorted(snapshot.images, key=lambda i: i.image_id):
        h.update(f"image {img.image_id}\n".encode())
        h.update(label_file_text(img).encode())
    return h.hexdigest()


def _parse_float(token: str, lo: float, hi: float, what: str, where: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{where}: {what} is not a number: {token!r}") from None
    if not (lo <= value <= hi):
        raise DataError(f"{where}: {what} {value} outside [{lo}, {hi}]")
    return value


def _parse_box_fields(parts: list[str], num_classes: int, where: str) -> tuple[int, BoundingBox]:
    try:
        class_id = int(parts[0])
    except ValueError:
        raise DataError(f"{where}: class id is not an integer: {parts[0]!r}") from None
    if not (0 <= class_id < num_classes):
        raise DataError(f"{where}: class id {class_id} outside [0, {num_classes})")
    cx = _parse_float(parts[1], 0.0, 1.0, "cx", where)
    cy = _parse_float(parts[2], 0.0, 1.0, "cy", where)
    w = _parse_float(parts[3], 0.0, 1.0, "w", where)
    h = _parse_float(parts[4], 0.0, 1.0, "h", where)
    if w <= 0.0 or h <= 0.0:
        raise DataError(f"{where}: box has non-positive size {w} x {h}")
    box = clip_box(cx, cy, w, h)
    if box is None:
        raise DataError(f"{where}: box clips to zero area")
    return class_id, box


def read_classes(classes_file: Path | str) -> list[str]:
    path = Path(classes_file)
    if not path.is_file():
        raise DataError(f"classes file not found: {path}")
    names = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    if not names:
        raise DataError(f"classes file is empty: {path}")
    if len(set(names)) != len(names):
        raise DataError(f"duplicate class names in {path}")
    return names


def _read_label_file(path: Path, num_classes: int, image_id: str) -> list[GroundTruthBox]:
    boxes = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{where}: expected 5 fields, got {len(parts)}")
        class_id, box = _parse_box_fields(parts, num_classes, where)
        boxes.append(GroundTruthBox(box, class_id, f"{image_id}:{lineno - 1}"))
    return boxes


def _read_prediction_file(path: Path, num_classes: int, image_id: str) -> list[PredictedBox]:
    preds = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        parts = line.split()
        if len(parts) != 6:
            raise DataError(f"{where}: expected 6 fields, got {len(parts)}")
        class_id, box = _parse_box_fields(parts, num_classes, where)
        score = _parse_float(parts[5], 0.0, 1.0, "score", where)
        preds.append(PredictedBox(box, class_id, score, f"{image_id}:p{lineno - 1}"))
    return preds


def is_validation_dir(directory: Path | str) -> bool:
    """True when the directory or its parent carries the validation marker."""
    d = Path(directory)
    return (d / VALIDATION_MARKER).exists() or (d.parent / VALIDATION_MARKER).exists()


def load_snapshot(
    labels_dir: Path | str,
    classes_file: Path | str,
    predictions_dir: Path | str | None = None,
    name: str | None = None,
) -> DatasetSnapshot:
    """Load a snapshot from label files, minting uids by file line index.

    Images are ordered by image id. When ``predictions_dir`` is given, a
    prediction file is matched to each label file by stem; images without a
    prediction file get ``predictions=None`` (meaning "no detector output
    available", as opposed to an empty file meaning "no detections").
    A prediction file whose stem has no label file is an error.
    """
    labels = Path(labels_dir)
    if not labels.is_dir():
        raise DataError(f"labels directory not found: {labels}")
    class_names = read_classes(classes_file)

    images = []
    stems = set()
    for path in sorted(labels.glob("*.txt")):
        image_id = path.stem
        stems.add(image_id)
        images.append(ImageRecord(image_id, _read_label_file(path, len(class_names), image_id)))

    if predictions_dir is not None:
        preds_path = Path(predictions_dir)
        if not preds_path.is_dir():
            raise DataError(f"predictions directory not found: {preds_path}")
        orphans = sorted(p.stem for p in preds_path.glob("*.txt") if p.stem not in stems)
        if orphans:
            raise DataError(f"prediction files without matching labels: {', '.join(orphans)}")
        for img in images:
            pfile = preds_path / f"{img.image_id}.txt"
            if pfile.is_file():
                img.predictions = _read_prediction_file(pfile, len(class_names), img.image_id)

    return DatasetSnapshot(
        name=name or labels.resolve().parent.name,
        class_names=class_names,
        images=images,
        validation=is_validation_dir(labels),
    )


def save_snapshot(snapshot: DatasetSnapshot, out_dir: Path | str, validation: bool = False) -> None:
    """Write a snapshot in the canonical byte-stable layout.

    Label lines are sorted and written at fixed precision, so semantically
    equal snapshots produce identical bytes regardless of construction
    order, and saving twice is a no-op byte-wise.
    """
    out = Path(out_dir)
    labels = out / "labels"
    labels.mkdir(parents=True, exist_ok=True)
    (out / "classes.txt").write_text("".join(n + "\n" for n in snapshot.class_names))

    digests = {}
    for img in sorted(snapshot.images, key=lambda i: i.image_id):
        text = label_file_text(img)
        (labels / f"{img.image_id}.txt").write_text(text)
        digests[img.image_id] = hashlib.sha256(text.encode()).hexdigest()

    if any(img.predictions is not None for img in snapshot.images):
        preds = out / "predictions"
        preds.mkdir(exist_ok=True)
        for img in snapshot.images:
            if img.predictions is not None:
                (preds / f"{img.image_id}.txt").write_text(prediction_file_text(img))

    manifest = {
        "name": snapshot.name,
        "class_names": snapshot.class_names,
        "label_digests": digests,
        "snapshot_hash": snapshot.snapshot_hash,
        "validation": bool(validation or snapshot.validation),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if validation or snapshot.validation:
        (out / VALIDATION_MARKER).write_text("protected validation split; cleaning commands refuse to modify it\n")


def with_predictions(
    snapshot: DatasetSnapshot, predictions: dict[str, list[PredictedBox]]
) -> DatasetSnapshot:
    """A copy of the snapshot with prediction lists swapped in by image id.

    Images absent from the mapping get None, i.e. "no detector output".
    """
    images = [
        ImageRecord(img.image_id, img.ground_truth, predictions.get(img.image_id))
        for img in snapshot.images
    ]
    return DatasetSnapshot(
        snapshot.name, list(snapshot.class_names), images,
        snapshot_hash=snapshot.snapshot_hash, validation=snapshot.validation,
    )


def save_predictions(predictions: dict[str, list[PredictedBox]], out_dir: Path | str) -> None:
    """Write per-image prediction files ("class cx cy w h score" lines)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for image_id in sorted(predictions):
        record = ImageRecord(image_id, [], predictions[image_id])
        (out / f"{image_id}.txt").write_text(prediction_file_text(record))


def normalize_uids(snapshot: DatasetSnapshot) -> tuple[DatasetSnapshot, dict[str, str]]:
    """Renumber box uids exactly as a save + load round trip would.

    Returns the renumbered snapshot and the old-uid to new-uid mapping, so
    sidecar records (noise ledgers) written next to a saved snapshot can
    reference the uids the next load will mint.
    """
    mapping = {}
    images = []
    for img in snapshot.images:
        ordered = sorted(img.ground_truth, key=_box_sort_key)
        renumbered = []
        for i, gt in enumerate(ordered):
            new_uid = f"{img.image_id}:{i}"
            mapping[gt.box_uid] = new_uid
            renumbered.append(replace(gt, box_uid=new_uid))
        images.append(ImageRecord(img.image_id, renumbered, img.predictions))
    out = DatasetSnapshot(
        name=snapshot.name,
        class_names=list(snapshot.class_names),
        images=images,
        snapshot_hash=snapshot.snapshot_hash,
        validation=snapshot.validation,
    )
    return out, mapping


def _same_annotation(a: GroundTruthBox, b: GroundTruthBox) -> bool:
    return a.class_id == b.class_id and a.box == b.box


def diff_snapshots(before: DatasetSnapshot, after: DatasetSnapshot) -> SnapshotDiff:
    """Classify annotation changes between two snapshots of one dataset.

    Matching runs in phases so a save/load cycle that renumbered uids does
    not fake changes: unchanged annotations pair up first (by uid, then by
    content at IoU >= 0.99 same class), then surviving uids among the
    leftovers identify in-place relabels and relocations, then
    geometry-identical cross-class pairs recover relabels whose uids were
    lost. Whatever remains is a removal or an addition.
    """
    if before.class_names != after.class_names:
        raise DataError("snapshots have different class lists")

    diff = SnapshotDiff()
    ids = sorted({img.image_id for img in before.images} | {img.image_id for img in after.images})
    before_by_id = {img.image_id: img for img in before.images}
    after_by_id = {img.image_id: img for img in after.images}

    for image_id in ids:
        b_boxes = before_by_id[image_id].ground_truth if image_id in before_by_id else []
        a_boxes = after_by_id[image_id].ground_truth if image_id in after_by_id else []
        a_map = {gt.box_uid: gt for gt in a_boxes}

        # identical annotations whose uid survived
        b_left, matched_after = [], set()
        for old in b_boxes:
            new = a_map.get(old.box_uid)
            if new is not None and _same_annotation(old, new):
                matched_after.add(old.box_uid)
            else:
                b_left.append(old)
        a_left = [gt for gt in a_boxes if gt.box_uid not in matched_after]

        # identical content that was renumbered
        b_left, a_left = _match_greedy(b_left, a_left, same_class=True, out=None)

        # surviving uids among the changed leftovers are in-place edits
        a_by_uid = {gt.box_uid: gt for gt in a_left}
        b_rest = []
        for old in b_left:
            new = a_by_uid.pop(old.box_uid, None)
            if new is None:
                b_rest.append(old)
            elif old.class_id != new.class_id and old.box == new.box:
                diff.relabeled.append((image_id, old.box_uid, old.class_id, new.class_id))
            elif old.class_id == new.class_id:
                diff.relocated.append((image_id, old.box_uid, old.box, new.box))
            else:
                diff.removed.append((image_id, old))
                diff.added.append((image_id, new))
        a_rest = [gt for gt in a_left if gt.box_uid in a_by_uid]

        # geometry-identical cross-class leftovers are relabels that lost uids
        pairs = []
        b_rest, a_rest = _match_greedy(b_rest, a_rest, same_class=False, out=pairs)
        for old, new in pairs:
            if old.box == new.box:
                diff.relabeled.append((image_id, old.box_uid, old.class_id, new.class_id))
            else:
                diff.removed.append((image_id, old))
                diff.added.append((image_id, new))
        diff.removed.extend((image_id, gt) for gt in b_rest)
        diff.added.extend((image_id, gt) for gt in a_rest)

    return diff


def _match_greedy(before, after, same_class, out):
    """Greedy descending-IoU matching at DIFF_MATCH_IOU; returns leftovers."""
    candidates = []
    for i, old in enumerate(before):
        for j, new in enumerate(after):
            if same_class and old.class_id != new.class_id:
                continue
            value = iou(old.box, new.box)
            if value >= DIFF_MATCH_IOU:
                candidates.append((-value, i, j))
    candidates.sort()
    used_b, used_a = set(), set()
    for _, i, j in candidates:
        if i in used_b or j in used_a:
            continue
        used_b.add(i)
        used_a.add(j)
        if out is not None:
            out.append((before[i], after[j]))
    b_left = [gt for i, gt in enumerate(before) if i not in used_b]
    a_left = [gt for j, gt in enumerate(after) if j not in used_a]
    return b_left, a_left


def apply_diff(snapshot: DatasetSnapshot, diff: SnapshotDiff) -> DatasetSnapshot:
    """Apply a diff as a patch, reproducing the target's annotation content."""
    by_image: dict[str, dict[str, GroundTruthBox]] = {
        img.image_id: {gt.box_uid: gt for gt in img.ground_truth} for img in snapshot.images
    }
    for image_id, gt in diff.removed:
        if gt.box_uid not in by_image.get(image_id, {}):
            raise DataError(f"patch removes unknown box {gt.box_uid} in {image_id}")
        del by_image[image_id][gt.box_uid]
    for image_id, uid, _old, new_class in diff.relabeled:
        gt = by_image[image_id][uid]
        by_image[image_id][uid] = replace(gt, class_id=new_class)
    for image_id, uid, _old, new_box in diff.relocated:
        gt = by_image[image_id][uid]
        by_image[image_id][uid] = replace(gt, box=new_box)
    for image_id, gt in diff.added:
        slot = by_image.setdefault(image_id, {})
        uid = gt.box_uid
        while uid in slot:
            uid += "+"
        slot[uid] = replace(gt, box_uid=uid)

    images = [
        ImageRecord(img.image_id, list(by_image[img.image_id].values()), img.predictions)
        for img in snapshot.images
    ]
    known = {img.image_id for img in snapshot.images}
    for image_id in sorted(by_image):
        if image_id not in known:
            images.append(ImageRecord(image_id, list(by_image[image_id].values())))
    return DatasetSnapshot(snapshot.name, list(snapshot.class_names), images)


def diff_to_records(diff: SnapshotDiff) -> list[dict]:
    """Flatten a diff into sorted line-delimited records."""
    records = []
    for image_id, gt in diff.added:
        records.append({"change": "added", "image_id": image_id, "box_uid": gt.box_uid,
                        "class_id": gt.class_id, "box": _box_dict(gt.box)})
    for image_id, gt in diff.removed:
        records.append({"change": "removed", "image_id": image_id, "box_uid": gt.box_uid,
                        "class_id": gt.class_id, "box": _box_dict(gt.box)})
    for image_id, uid, old, new in diff.relabeled:
        records.append({"change": "relabeled", "image_id": image_id, "box_uid": uid,
                        "old_class": old, "new_class": new})
    for image_id, uid, old, new in diff.relocated:
        records.append({"change": "relocated", "image_id": image_id, "box_uid": uid,
                        "old_box": _box_dict(old), "new_box": _box_dict(new)})
    records.sort(key=lambda r: (r["image_id"], r["change"], r["box_uid"]))
    return records


def _box_dict(box: BoundingBox) -> dict:
    return {"cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h}
