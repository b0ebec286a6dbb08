"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from mddc.dataset import DatasetSnapshot, ImageRecord, save_snapshot
from mddc.geometry import BoundingBox, GroundTruthBox, PredictedBox


def box(cx, cy, w, h) -> BoundingBox:
    return BoundingBox(cx, cy, w, h)


def gt(cx, cy, w, h, class_id=0, uid="g0") -> GroundTruthBox:
    return GroundTruthBox(BoundingBox(cx, cy, w, h), class_id, uid)


def pred(cx, cy, w, h, class_id=0, score=1.0, uid="p0") -> PredictedBox:
    return PredictedBox(BoundingBox(cx, cy, w, h), class_id, score, uid)


def make_reference_snapshot(
    num_images: int,
    num_classes: int = 2,
    seed: int = 7,
    name: str = "reference",
) -> DatasetSnapshot:
    """Desk-scale fixture: 3-7 well-separated boxes per image.

    Boxes sit on a jittered 3x3 grid (cell centers 0.2/0.5/0.8) with sizes
    small enough that the default relocation band can never push a box into
    a neighbor's clustering range, which keeps end-to-end recovery exact.
    """
    rng = np.random.default_rng(seed)
    images = []
    cells = [(x, y) for x in (0.2, 0.5, 0.8) for y in (0.2, 0.5, 0.8)]
    for i in range(num_images):
        image_id = f"img{i:04d}"
        n = int(rng.integers(3, 8))
        chosen = rng.choice(len(cells), size=n, replace=False)
        boxes = []
        for k, cell_idx in enumerate(sorted(int(c) for c in chosen)):
            cx0, cy0 = cells[cell_idx]
            boxes.append(
                GroundTruthBox(
                    BoundingBox(
                        cx0 + rng.uniform(-0.03, 0.03),
                        cy0 + rng.uniform(-0.03, 0.03),
                        rng.uniform(0.05, 0.078),
                        rng.uniform(0.05, 0.078),
                    ),
                    int(rng.integers(num_classes)),
                    f"{image_id}:{k}",
                )
            )
        images.append(ImageRecord(image_id, boxes))
    class_names = [f"class{c}" for c in range(num_classes)]
    return DatasetSnapshot(name, class_names, images)


def write_snapshot_dir(snapshot: DatasetSnapshot, root) -> tuple:
    """Save a snapshot under root; returns (labels_dir, classes_file)."""
    save_snapshot(snapshot, root)
    return root / "labels", root / "classes.txt"


@pytest.fixture
def small_snapshot() -> DatasetSnapshot:
    return make_reference_snapshot(12, seed=3, name="small")
