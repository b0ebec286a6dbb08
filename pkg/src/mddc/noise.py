"""Seeded synthetic annotation noise with a full audit ledger.

Four corruption kinds mirror the error taxonomy: ``delete`` (drops a box so
it goes missing), ``spurious`` (adds a box no object supports),
``relocate`` (jitters a box into a target IoU band with its original), and
``relabel`` (flips a class). Every event lands in a ledger keyed by box
uid, and replaying the ledger reconstructs the original snapshot exactly.

Randomness is split in two: one master generator (seeded from the
NoiseSpec) picks event kinds and targets, and each image derives its own
generator from (seed, image id) for geometry and class sampling, so
per-image work is order-independent.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import PRECISION, DatasetSnapshot, ImageRecord
from .errors import DataError
from .geometry import BoundingBox, GroundTruthBox, clip_box, iou

NOISE_KINDS = ("delete", "spurious", "relocate", "relabel")

DEFAULT_MIX = (0.25, 0.25, 0.25, 0.25)
DEFAULT_LOCATION_BAND = (0.1, 0.5)

# Spurious boxes are kept below clustering reach of both the current boxes
# and every original location, so an injected box can never latch onto a
# real object's prediction.
SPURIOUS_SEPARATION_IOU = 0.4
SPURIOUS_PLACEMENT_ATTEMPTS = 200

RELOCATE_ATTEMPTS = 1000


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption recipe: rate of boxes to touch, kind mix, seed, IoU band."""

    rate: float
    mix: tuple[float, float, float, float] = DEFAULT_MIX
    seed: int = 0
    location_iou_band: tuple[float, float] = DEFAULT_LOCATION_BAND

    def __post_init__(self):
        if not (0.0 < self.rate < 1.0):
            raise DataError(f"noise rate must be in (0, 1), got {self.rate}")
        if len(self.mix) != 4 or any(w < 0 for w in self.mix):
            raise DataError(f"mix needs 4 non-negative weights, got {self.mix}")
        if abs(sum(self.mix) - 1.0) > 1e-9:
            raise DataError(f"mix weights must sum to 1, got {sum(self.mix)}")
        low, high = self.location_iou_band
        if not (0.0 <= low < high <= 1.0):
            raise DataError(f"bad location IoU band: {self.location_iou_band}")


@dataclass(frozen=True)
class NoiseEntry:
    image_id: str
    box_uid: str
    kind: str
    original: GroundTruthBox | None
    corrupted: GroundTruthBox | None


@dataclass
class NoiseLedger:
    entries: list[NoiseEntry] = field(default_factory=list)

    def kind_counts(self) -> dict[str, int]:
        counts = {kind: 0 for kind in NOISE_KINDS}
        for e in self.entries:
            counts[e.kind] += 1
        return counts


def image_rng(purpose: str, seed: int, image_id: str) -> np.random.Generator:
    """Deterministic per-image generator, independent of processing order."""
    digest = hashlib.sha256(f"{purpose}:{seed}:{image_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def relocate_box(
    box: BoundingBox,
    band: tuple[float, float],
    rng: np.random.Generator,
    max_attempts: int = RELOCATE_ATTEMPTS,
) -> BoundingBox:
    """Jitter a box so its IoU with the original lands in [low, high).

    Proposals aim analytically at a target IoU drawn from the band (pure
    translation with a random axis split, occasionally a concentric
    rescale) and are rejection-checked after unit-square clipping. Raises
    when no attempt lands in the band, e.g. a near-zero band for a box
    filling the whole image.
    """
    low, high = band
    if not (0.0 <= low < high <= 1.0):
        raise DataError(f"bad IoU band: {band}")
    for _ in range(max_attempts):
        target = rng.uniform(low, high)
        if rng.random() < 0.25:
            candidate = _rescale_proposal(box, target, rng)
        else:
            candidate = _translate_proposal(box, target, rng)
        if candidate is not None and low <= iou(box, candidate) < high:
            return candidate
    raise DataError(
        f"could not move box to IoU band [{low}, {high}) in {max_attempts} attempts"
    )


def _fits_inside(cx, cy, w, h) -> BoundingBox | None:
    """The box itself, only when it lies fully inside the unit square.

    Relocation proposals must not lean on clip-shrinking: a translated box
    keeps its size or the attempt is rejected, which is what makes tiny IoU
    bands genuinely infeasible for boxes that fill the image.
    """
    if cx - w / 2.0 < 0.0 or cy - h / 2.0 < 0.0 or cx + w / 2.0 > 1.0 or cy + h / 2.0 > 1.0:
        return None
    return BoundingBox(cx, cy, w, h)


def _translate_proposal(box, target, rng):
    # For a pure translation by fractions (tx, ty) of the box size,
    # IoU = g / (2 - g) with g = (1-|tx|)(1-|ty|); invert and split g
    # randomly between the axes.
    g = 2.0 * target / (1.0 + target)
    a = rng.random()
    tx = 1.0 - g**a
    ty = 1.0 - g ** (1.0 - a)
    dx = tx * box.w * (1.0 if rng.random() < 0.5 else -1.0)
    dy = ty * box.h * (1.0 if rng.random() < 0.5 else -1.0)
    return _fits_inside(box.cx + dx, box.cy + dy, box.w, box.h)


# Bound on size perturbations: scale proposals model annotation sloppiness,
# not arbitrary shrinkage, so they cannot fake extreme IoU targets.
MIN_RESCALE = 0.6


def _rescale_proposal(box, target, rng):
    # Concentric rescale of both sides by s gives IoU s^2 (shrink) or
    # 1/s^2 (grow), so s = sqrt(target) hits the target either way.
    s = math.sqrt(max(target, 1e-12))
    if s < MIN_RESCALE:
        return None
    if rng.random() < 0.5:
        w, h = box.w * s, box.h * s
    else:
        w, h = box.w / s, box.h / s
    if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
        return None
    return _fits_inside(box.cx, box.cy, w, h)


def inject_noise(snapshot: DatasetSnapshot, spec: NoiseSpec) -> tuple[DatasetSnapshot, NoiseLedger]:
    """Corrupt exactly ceil(rate * N) annotations; returns (snapshot, ledger).

    The first draw from the master generator fixes the event kinds:
    ``numpy.random.default_rng(seed).choice(4, size=count, p=mix)`` indexed
    into ("delete", "spurious", "relocate", "relabel"). Delete, relocate,
    and relabel targets are then drawn without replacement over all boxes
    in (image id, line) order. Identical spec and snapshot give identical
    output, entry for entry.
    """
    total = snapshot.total_boxes()
    if total == 0:
        raise DataError("cannot inject noise into a snapshot with no annotations")

    count = math.ceil(spec.rate * total)
    master = np.random.default_rng(spec.seed)
    kinds = [NOISE_KINDS[i] for i in master.choice(4, size=count, p=list(spec.mix))]

    if "relabel" in kinds and snapshot.num_classes < 2:
        raise DataError("relabel noise needs at least 2 classes")

    images = sorted(snapshot.images, key=lambda im: im.image_id)
    pool = [
        (img_idx, box_idx)
        for img_idx, img in enumerate(images)
        for box_idx in range(len(img.ground_truth))
    ]

    inplace_kinds = [k for k in kinds if k != "spurious"]
    target_ids = master.choice(len(pool), size=len(inplace_kinds), replace=False)
    events_by_image: dict[int, list[tuple[int, str]]] = {}
    for kind, t in zip(inplace_kinds, target_ids):
        img_idx, box_idx = pool[int(t)]
        events_by_image.setdefault(img_idx, []).append((box_idx, kind))

    all_gt = [images[i].ground_truth[j] for i, j in pool]
    spurious_by_image: dict[int, list[GroundTruthBox | None]] = {}
    for kind in kinds:
        if kind != "spurious":
            continue
        if master.random() < 0.5:
            src_idx = int(master.integers(len(all_gt)))
            img_idx = pool[src_idx][0]
            spurious_by_image.setdefault(img_idx, []).append(all_gt[src_idx])
        else:
            img_idx = int(master.integers(len(images)))
            spurious_by_image.setdefault(img_idx, []).append(None)

    ledger = NoiseLedger()
    out_images = []
    for img_idx, img in enumerate(images):
        rng = image_rng("noise", spec.seed, img.image_id)
        boxes = list(img.ground_truth)
        originals = [gt.box for gt in img.ground_truth]
        uid_events = sorted(events_by_image.get(img_idx, []))
        dropped = set()
        for box_idx, kind in uid_events:
            gt = img.ground_truth[box_idx]
            if kind == "delete":
                dropped.add(gt.box_uid)
                ledger.entries.append(NoiseEntry(img.image_id, gt.box_uid, "delete", gt, None))
            elif kind == "relabel":
                new_class = int((gt.class_id + 1 + rng.integers(snapshot.num_classes - 1))
                                % snapshot.num_classes)
                corrupted = replace(gt, class_id=new_class)
                boxes[box_idx] = corrupted
                ledger.entries.append(NoiseEntry(img.image_id, gt.box_uid, "relabel", gt, corrupted))
            elif kind == "relocate":
                moved = relocate_box(gt.box, spec.location_iou_band, rng)
                corrupted = replace(gt, box=moved)
                boxes[box_idx] = corrupted
                ledger.entries.append(NoiseEntry(img.image_id, gt.box_uid, "relocate", gt, corrupted))
        boxes = [gt for gt in boxes if gt.box_uid not in dropped]

        for k, source_gt in enumerate(spurious_by_image.get(img_idx, [])):
            avoid = originals + [gt.box for gt in boxes]
            if source_gt is not None:
                new_box = _spurious_near(source_gt.box, avoid, rng)
                new_class = source_gt.class_id
            else:
                new_box = _spurious_uniform(all_gt, avoid, rng)
                new_class = int(rng.integers(snapshot.num_classes))
            uid = f"{img.image_id}:s{k}"
            added = GroundTruthBox(new_box, new_class, uid)
            boxes.append(added)
            ledger.entries.append(NoiseEntry(img.image_id, uid, "spurious", None, added))

        out_images.append(ImageRecord(img.image_id, boxes, img.predictions))

    corrupted_snapshot = DatasetSnapshot(
        snapshot.name, list(snapshot.class_names), out_images, validation=snapshot.validation
    )
    return corrupted_snapshot, ledger


def _spurious_near(source: BoundingBox, avoid: list[BoundingBox], rng) -> BoundingBox:
    """Offset a copy of an existing box until it clears every nearby box."""
    best, best_overlap = None, 2.0
    for attempt in range(SPURIOUS_PLACEMENT_ATTEMPTS):
        reach = 1.0 + attempt / 25.0
        dx = rng.uniform(-reach, reach) * source.w
        dy = rng.uniform(-reach, reach) * source.h
        scale = rng.uniform(0.8, 1.2)
        cand = clip_box(source.cx + dx, source.cy + dy, source.w * scale, source.h * scale)
        if cand is None:
            continue
        overlap = max((iou(cand, b) for b in avoid), default=0.0)
        if overlap < SPURIOUS_SEPARATION_IOU:
            return cand
        if overlap < best_overlap:
            best, best_overlap = cand, overlap
    if best is None:
        raise DataError("could not place a spurious box")
    return best


def _spurious_uniform(all_gt: list[GroundTruthBox], avoid: list[BoundingBox], rng) -> BoundingBox:
    """Random placement with size drawn from the snapshot's box sizes."""
    best, best_overlap = None, 2.0
    for _ in range(SPURIOUS_PLACEMENT_ATTEMPTS):
        template = all_gt[int(rng.integers(len(all_gt)))].box
        cand = clip_box(rng.uniform(0, 1), rng.uniform(0, 1), template.w, template.h)
        if cand is None:
            continue
        overlap = max((iou(cand, b) for b in avoid), default=0.0)
        if overlap < SPURIOUS_SEPARATION_IOU:
            return cand
        if overlap < best_overlap:
            best, best_overlap = cand, overlap
    if best is None:
        raise DataError("could not place a spurious box")
    return best


def revert_noise(corrupted: DatasetSnapshot, ledger: NoiseLedger) -> DatasetSnapshot:
    """Undo every ledger entry, reconstructing the pre-noise snapshot.

    Boxes are located by uid when uids survive and by content (class plus
    6-decimal geometry) otherwise, so replay also works on a snapshot that
    went through a save/load cycle and had its uids renumbered.
    """
    by_image = {img.image_id: list(img.ground_truth) for img in corrupted.images}
    for entry in ledger.entries:
        if entry.image_id not in by_image:
            raise DataError(f"ledger references unknown image: {entry.image_id}")
        boxes = by_image[entry.image_id]
        if entry.kind == "delete":
            restored = entry.original
            if any(gt.box_uid == restored.box_uid for gt in boxes):
                restored = replace(restored, box_uid=restored.box_uid + "+r")
            boxes.append(restored)
        elif entry.kind == "spurious":
            idx = _locate(boxes, entry.box_uid, entry.corrupted)
            del boxes[idx]
        else:
            idx = _locate(boxes, entry.box_uid, entry.corrupted)
            boxes[idx] = replace(entry.original, box_uid=boxes[idx].box_uid)
    images = [ImageRecord(img.image_id, by_image[img.image_id], img.predictions)
              for img in corrupted.images]
    return DatasetSnapshot(corrupted.name, list(corrupted.class_names), images,
                           validation=corrupted.validation)


def _locate(boxes: list[GroundTruthBox], uid: str, content: GroundTruthBox) -> int:
    for i, gt in enumerate(boxes):
        if gt.box_uid == uid:
            return i
    key = _content_key(content)
    for i, gt in enumerate(boxes):
        if _content_key(gt) == key:
            return i
    raise DataError(f"ledger entry does not match the snapshot: {uid}")


def _content_key(gt: GroundTruthBox) -> tuple:
    b = gt.box
    return (gt.class_id, round(b.cx, PRECISION), round(b.cy, PRECISION),
            round(b.w, PRECISION), round(b.h, PRECISION))


def remap_ledger(ledger: NoiseLedger, mapping: dict[str, str]) -> NoiseLedger:
    """Rewrite ledger uids after a snapshot's uids were renumbered."""
    out = NoiseLedger()
    for e in ledger.entries:
        original = e.original
        corrupted = e.corrupted
        uid = e.box_uid
        if corrupted is not None and corrupted.box_uid in mapping:
            uid = mapping[corrupted.box_uid]
            corrupted = replace(corrupted, box_uid=uid)
        out.entries.append(NoiseEntry(e.image_id, uid, e.kind, original, corrupted))
    return out


def _gt_to_dict(gt: GroundTruthBox | None) -> dict | None:
    if gt is None:
        return None
    return {"class_id": gt.class_id, "cx": gt.box.cx, "cy": gt.box.cy,
            "w": gt.box.w, "h": gt.box.h, "box_uid": gt.box_uid}


def _gt_from_dict(d: dict | None) -> GroundTruthBox | None:
    if d is None:
        return None
    return GroundTruthBox(BoundingBox(d["cx"], d["cy"], d["w"], d["h"]),
                          d["class_id"], d["box_uid"])


def write_ledger(ledger: NoiseLedger, path: Path | str) -> None:
    """Line-delimited JSON, one corruption event per line, full precision."""
    lines = [
        json.dumps({"image_id": e.image_id, "box_uid": e.box_uid, "kind": e.kind,
                    "original": _gt_to_dict(e.original), "corrupted": _gt_to_dict(e.corrupted)},
                   sort_keys=True)
        for e in ledger.entries
    ]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_ledger(path: Path | str) -> NoiseLedger:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"ledger file not found: {p}")
    ledger = NoiseLedger()
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            ledger.entries.append(NoiseEntry(d["image_id"], d["box_uid"], d["kind"],
                                             _gt_from_dict(d["original"]),
                                             _gt_from_dict(d["corrupted"])))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{p}:{lineno}: bad ledger record: {exc}") from None
    return ledger
