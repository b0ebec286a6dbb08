"""Synthetic detector with controllable fidelity.

Generates predictions from a reference snapshot so the cleaning pipeline
can be exercised end to end without training a network. In exact mode the
output reproduces the reference annotations with score 1.0; the knobs
degrade it toward realistic detector behavior: per-box recall, center/size
jitter, class confusion, and per-image false positives.

Confusion resamples a prediction's class uniformly over all classes, so it
may land back on the original. False positives draw low confidence scores
(a fixed Beta model with mean ~0.4), mirroring how real detectors are
least sure about their hallucinations; correct detections draw from the
configurable ``score_agree`` model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DatasetSnapshot
from .errors import DataError
from .geometry import BoundingBox, PredictedBox, clip_box
from .noise import image_rng

FP_SCORE_MEAN = 0.4
FP_SCORE_CONCENTRATION = 15.0


@dataclass(frozen=True)
class OracleConfig:
    """Fidelity knobs for the synthetic detector.

    ``score_agree`` is (mean, concentration) of a Beta distribution for
    correct-detection confidences; concentration 0 means the constant
    ``mean``. ``localization_sigma`` scales jitter by the box's own size.
    """

    recall: float = 1.0
    score_agree: tuple[float, float] = (1.0, 0.0)
    localization_sigma: float = 0.0
    confusion_rate: float = 0.0
    false_positive_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("recall", "confusion_rate"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise DataError(f"{name} must be in [0, 1], got {value}")
        if self.localization_sigma < 0.0:
            raise DataError(f"localization_sigma must be >= 0, got {self.localization_sigma}")
        if self.false_positive_rate < 0.0:
            raise DataError(f"false_positive_rate must be >= 0, got {self.false_positive_rate}")
        mean, concentration = self.score_agree
        if not (0.0 < mean <= 1.0) or concentration < 0.0:
            raise DataError(f"bad score_agree parameters: {self.score_agree}")


def exact_oracle(seed: int = 0) -> OracleConfig:
    """The identity detector: every reference box, unmoved, score 1.0."""
    return OracleConfig(seed=seed)


def _draw_score(params: tuple[float, float], rng: np.random.Generator) -> float:
    mean, concentration = params
    if concentration <= 0.0 or mean >= 1.0:
        return float(mean)
    return float(rng.beta(mean * concentration, (1.0 - mean) * concentration))


def _jitter(box: BoundingBox, sigma: float, rng: np.random.Generator) -> BoundingBox:
    if sigma <= 0.0:
        return box
    for _ in range(100):
        cx = box.cx + rng.normal(0.0, sigma) * box.w
        cy = box.cy + rng.normal(0.0, sigma) * box.h
        w = box.w * max(0.05, 1.0 + rng.normal(0.0, sigma))
        h = box.h * max(0.05, 1.0 + rng.normal(0.0, sigma))
        jittered = clip_box(min(max(cx, 0.0), 1.0), min(max(cy, 0.0), 1.0), min(w, 1.0), min(h, 1.0))
        if jittered is not None:
            return jittered
    return box


def generate_predictions(
    reference: DatasetSnapshot, config: OracleConfig
) -> dict[str, list[PredictedBox]]:
    """Predictions per image id, deterministic for a given (reference, config).

    Every image present in the reference gets an entry, possibly empty, so
    downstream loading always finds a prediction file per label file.
    """
    num_classes = reference.num_classes
    out: dict[str, list[PredictedBox]] = {}
    for img in sorted(reference.images, key=lambda im: im.image_id):
        rng = image_rng("oracle", config.seed, img.image_id)
        preds: list[PredictedBox] = []
        for gt in img.ground_truth:
            if rng.random() >= config.recall:
                continue
            class_id = gt.class_id
            if config.confusion_rate > 0.0 and rng.random() < config.confusion_rate:
                class_id = int(rng.integers(num_classes))
            box = _jitter(gt.box, config.localization_sigma, rng)
            score = _draw_score(config.score_agree, rng)
            preds.append(PredictedBox(box, class_id, score, f"{img.image_id}:p{len(preds)}"))

        if config.false_positive_rate > 0.0:
            for _ in range(int(rng.poisson(config.false_positive_rate))):
                preds.append(_false_positive(img, num_classes, f"{img.image_id}:p{len(preds)}", rng))

        out[img.image_id] = preds
    return out


def _false_positive(img, num_classes: int, uid: str, rng) -> PredictedBox:
    """A hallucinated detection: near a real box half the time, else anywhere."""
    if img.ground_truth and rng.random() < 0.5:
        source = img.ground_truth[int(rng.integers(len(img.ground_truth)))].box
        box = None
        while box is None:
            box = clip_box(
                source.cx + rng.uniform(-2.0, 2.0) * source.w,
                source.cy + rng.uniform(-2.0, 2.0) * source.h,
                source.w * rng.uniform(0.7, 1.4),
                source.h * rng.uniform(0.7, 1.4),
            )
    else:
        size_template = (
            img.ground_truth[int(rng.integers(len(img.ground_truth)))].box
            if img.ground_truth
            else BoundingBox(0.5, 0.5, 0.1, 0.1)
        )
        box = None
        while box is None:
            box = clip_box(rng.uniform(0, 1), rng.uniform(0, 1), size_template.w, size_template.h)
    score = _draw_score((FP_SCORE_MEAN, FP_SCORE_CONCENTRATION), rng)
    return PredictedBox(box, int(rng.integers(num_classes)), score, uid)
