"""Region and boundary quality measures plus sequence-level aggregation.

J is plain intersection-over-union of one object's pixels. F is the harmonic
mean of boundary precision and recall, where a boundary pixel counts as
matched when it lies within a distance threshold of the other mask's
boundary. Empty-vs-empty compares as perfect for both measures, so frames
where an object is correctly absent are not penalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .types import DataError, LabelMask, ObjectSet, diagonal


def _check_shapes(pred: LabelMask, gt: LabelMask) -> None:
    if pred.ids.shape != gt.ids.shape:
        raise DataError(f"mask shape mismatch: {pred.ids.shape} vs {gt.ids.shape}")


def jaccard(pred: LabelMask, gt: LabelMask, object_id: int) -> float:
    """|pred_o intersect gt_o| / |pred_o union gt_o|; both empty -> 1.0."""
    _check_shapes(pred, gt)
    p = pred.ids == object_id
    g = gt.ids == object_id
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def boundary_pixels(binary: np.ndarray) -> np.ndarray:
    """Object pixels with a 4-neighbor outside the object (the image edge counts)."""
    padded = np.pad(binary, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return binary & ~interior


def boundary_f_pixels(pred: LabelMask, gt: LabelMask, object_id: int, threshold_px: float) -> float:
    """Boundary F with the match radius given directly in pixels."""
    _check_shapes(pred, gt)
    pred_b = np.argwhere(boundary_pixels(pred.ids == object_id))
    gt_b = np.argwhere(boundary_pixels(gt.ids == object_id))
    if pred_b.size == 0 and gt_b.size == 0:
        return 1.0
    if pred_b.size == 0 or gt_b.size == 0:
        return 0.0
    precision = float(np.mean(cKDTree(gt_b).query(pred_b)[0] <= threshold_px))
    recall = float(np.mean(cKDTree(pred_b).query(gt_b)[0] <= threshold_px))
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def boundary_f(pred: LabelMask, gt: LabelMask, object_id: int, tolerance: float) -> float:
    """Boundary F with the match radius as a fraction of the image diagonal."""
    h, w = gt.ids.shape
    return boundary_f_pixels(pred, gt, object_id, tolerance * diagonal(h, w))


def boundary_threshold_px(height: int, width: int, fraction: float) -> float:
    """Default match radius: fraction of the diagonal, but never below one pixel."""
    return max(1.0, fraction * diagonal(height, width))


@dataclass(frozen=True)
class ObjectScores:
    """Per-frame J and F for one object, frames t >= 1 in order."""

    object_id: int
    j: tuple[float, ...]
    f: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.j) != len(self.f):
            raise DataError("J and F series must have equal length")
        if len(self.j) == 0:
            raise DataError("object scores need at least one frame")
        for v in (*self.j, *self.f):
            if not 0.0 <= v <= 1.0:
                raise DataError(f"scores must lie in [0,1], got {v}")


@dataclass(frozen=True)
class MetricsReport:
    per_object: tuple[ObjectScores, ...]
    mean_j: float
    mean_f: float
    overall_score: float


def overall(per_object: list[ObjectScores]) -> MetricsReport:
    """Aggregate per-object series: Overall = (mean J + mean F) / 2."""
    if not per_object:
        raise DataError("need scores for at least one object")
    all_j = [v for s in per_object for v in s.j]
    all_f = [v for s in per_object for v in s.f]
    mean_j = float(np.mean(all_j))
    mean_f = float(np.mean(all_f))
    return MetricsReport(
        per_object=tuple(per_object),
        mean_j=mean_j,
        mean_f=mean_f,
        overall_score=(mean_j + mean_f) / 2.0,
    )


def evaluate_sequence(
    preds: list[LabelMask],
    gts: list[LabelMask],
    objects: ObjectSet,
    tolerance: float = 0.008,
) -> MetricsReport:
    """Score frames t >= 1 of a sequence (frame 0 is the given mask).

    `tolerance` is a diagonal fraction; the effective boundary radius never
    drops below one pixel.
    """
    if len(preds) != len(gts):
        raise DataError(f"{len(preds)} predictions vs {len(gts)} ground-truth frames")
    if len(preds) < 2:
        raise DataError("nothing to evaluate: need at least two frames")
    h, w = gts[0].ids.shape
    threshold = boundary_threshold_px(h, w, tolerance)
    scores = []
    for oid in objects:
        js = []
        fs = []
        for pred, gt in zip(preds[1:], gts[1:]):
            js.append(jaccard(pred, gt, oid))
            fs.append(boundary_f_pixels(pred, gt, oid, threshold))
        scores.append(ObjectScores(object_id=oid, j=tuple(js), f=tuple(fs)))
    return overall(scores)


def report_text(report: MetricsReport) -> str:
    """Aligned per-object table plus machine-readable key = value lines."""
    lines = [f"{'object':>8}  {'mean J':>8}  {'mean F':>8}"]
    for s in report.per_object:
        lines.append(f"{s.object_id:>8}  {np.mean(s.j):>8.4f}  {np.mean(s.f):>8.4f}")
    lines.append("")
    lines.append(f"frames_scored = {len(report.per_object[0].j)}")
    lines.append(f"mean_j = {report.mean_j:.6f}")
    lines.append(f"mean_f = {report.mean_f:.6f}")
    lines.append(f"overall = {report.overall_score:.6f}")
    return "\n".join(lines) + "\n"
