"""Mask cleanup between frames: temporal component filtering and crop refinement.

The temporal filter drops connected components that jumped implausibly far
from the object's position in the previous frame. The crop refinement
re-segments small objects on an enlarged crop and pastes the sharper result
back. Both are pure transforms; the engine decides when to call them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .grids import downsample2, resize_bilinear
from .types import DataError, ImageFrame, LabelMask, ProbMap, diagonal

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# Crops are grown to at least this many pixels per side so the doubled
# sub-image is still a legal frame for the resegment callback.
MIN_CROP_SIDE = 4

ResegmentFn = Callable[[ImageFrame, ProbMap], ProbMap]


@dataclass(frozen=True)
class Component:
    """One 4-connected region of an object's pixels.

    `centroid` is (x, y) = (mean column, mean row), subpixel.
    """

    object_id: int
    rows: np.ndarray
    cols: np.ndarray
    centroid: tuple[float, float]

    @property
    def area(self) -> int:
        return int(self.rows.size)


def connected_components(mask: LabelMask, object_id: int) -> list[Component]:
    """4-connected components of one object, ordered by (min row, min col).

    Two components can share that key (an L shape can reach both extremes
    another component sits between), so the raster index of the first pixel
    breaks ties.
    """
    binary = mask.ids == object_id
    labels, count = ndimage.label(binary, structure=FOUR_CONN)
    if count == 0:
        return []
    width = mask.ids.shape[1]
    flat = labels.ravel()
    pixel_idx = np.flatnonzero(flat)
    order = pixel_idx[np.argsort(flat[pixel_idx], kind="stable")]
    starts = np.searchsorted(flat[order], np.arange(1, count + 1), side="left")
    ends = np.searchsorted(flat[order], np.arange(1, count + 1), side="right")
    components = []
    for k in range(count):
        pix = order[starts[k] : ends[k]]
        rows = pix // width
        cols = pix % width
        components.append(
            Component(
                object_id=object_id,
                rows=rows,
                cols=cols,
                centroid=(float(cols.mean()), float(rows.mean())),
            )
        )
    components.sort(key=lambda c: (c.rows[0], int(c.cols.min()), int(c.rows[0] * width + c.cols[0])))
    return components


def temporal_filter(mask_t: LabelMask, mask_prev: LabelMask, tau: float) -> LabelMask:
    """Remove components that moved farther than tau * image diagonal.

    Distances are measured between a component's centroid and the previous
    frame's whole-object centroid. If every component of an object is beyond
    the threshold the single nearest one is kept, so no tracked object
    disappears outright. Objects absent from the previous mask pass through
    unfiltered.
    """
    if mask_t.ids.shape != mask_prev.ids.shape:
        raise DataError(f"mask shape mismatch: {mask_t.ids.shape} vs {mask_prev.ids.shape}")
    if not 0.0 < tau <= 1.0:
        raise DataError("tau must be in (0,1]")
    h, w = mask_t.ids.shape
    threshold = tau * diagonal(h, w)
    out = mask_t.ids.copy()
    for oid in np.unique(mask_t.ids):
        if oid == 0:
            continue
        prev_rows, prev_cols = np.nonzero(mask_prev.ids == oid)
        if prev_rows.size == 0:
            continue
        prev_centroid = (float(prev_cols.mean()), float(prev_rows.mean()))
        components = connected_components(mask_t, int(oid))
        dists = [
            math.hypot(c.centroid[0] - prev_centroid[0], c.centroid[1] - prev_centroid[1])
            for c in components
        ]
        keep = [d <= threshold for d in dists]
        if not any(keep):
            keep[int(np.argmin(dists))] = True
        for component, retained in zip(components, keep):
            if not retained:
                out[component.rows, component.cols] = 0
    return LabelMask(out)


def _expanded_box(rows: np.ndarray, cols: np.ndarray, margin: float, h: int, w: int) -> tuple[int, int, int, int]:
    r0, r1 = int(rows.min()), int(rows.max())
    c0, c1 = int(cols.min()), int(cols.max())
    pad_r = math.ceil(margin * (r1 - r0 + 1))
    pad_c = math.ceil(margin * (c1 - c0 + 1))
    r0, r1 = max(0, r0 - pad_r), min(h - 1, r1 + pad_r)
    c0, c1 = max(0, c0 - pad_c), min(w - 1, c1 + pad_c)
    while r1 - r0 + 1 < MIN_CROP_SIDE:
        if r1 < h - 1:
            r1 += 1
        elif r0 > 0:
            r0 -= 1
        else:
            break
    while c1 - c0 + 1 < MIN_CROP_SIDE:
        if c1 < w - 1:
            c1 += 1
        elif c0 > 0:
            c0 -= 1
        else:
            break
    return r0, r1, c0, c1


def _upscale_frame(rgb: np.ndarray) -> ImageFrame:
    h, w = rgb.shape[:2]
    channels = [resize_bilinear(rgb[..., k].astype(np.float64), 2 * h, 2 * w) for k in range(3)]
    stacked = np.stack(channels, axis=-1)
    return ImageFrame(np.clip(np.rint(stacked), 0, 255).astype(np.uint8))


def _upscale_prob(prob: ProbMap, r0: int, r1: int, c0: int, c1: int) -> ProbMap:
    crop = prob.probs[:, r0 : r1 + 1, c0 : c1 + 1].astype(np.float64)
    h, w = crop.shape[1], crop.shape[2]
    up = np.stack([resize_bilinear(ch, 2 * h, 2 * w) for ch in crop])
    up /= up.sum(axis=0, keepdims=True)
    return ProbMap(prob.objects, up.astype(np.float32))


def crop_refine(
    frame: ImageFrame,
    prob: ProbMap,
    object_id: int,
    alpha: float,
    margin: float,
    resegment: ResegmentFn,
) -> ProbMap:
    """Re-segment one small object on a doubled crop and paste the result back.

    Fires only when the object's argmax area is strictly between 0 and
    alpha * H * W. The crop (object bounding box expanded by `margin` of its
    size per side) is upscaled x2 together with the probability seed, handed
    to `resegment`, and the refined object channel is downscaled and pasted.
    Outside the crop the object's probability is zeroed; every pixel is then
    renormalized. One pass, no recursion.
    """
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must be in (0,1)")
    if margin < 0.0:
        raise DataError("margin must be >= 0")
    h, w = prob.probs.shape[1], prob.probs.shape[2]
    if (frame.height, frame.width) != (h, w):
        raise DataError(f"frame size {(frame.height, frame.width)} does not match probabilities {(h, w)}")
    if object_id not in prob.objects.ids:
        raise DataError(f"object id {object_id} not in object set {prob.objects.ids}")
    mask = prob.to_mask()
    rows, cols = np.nonzero(mask.ids == object_id)
    area = rows.size
    if area == 0 or area >= alpha * h * w:
        return prob

    r0, r1, c0, c1 = _expanded_box(rows, cols, margin, h, w)
    crop_frame = _upscale_frame(frame.rgb[r0 : r1 + 1, c0 : c1 + 1])
    seed = _upscale_prob(prob, r0, r1, c0, c1)
    refined = resegment(crop_frame, seed)
    if refined.objects != prob.objects:
        raise DataError("resegment callback changed the object set")
    if refined.probs.shape != seed.probs.shape:
        raise DataError(
            f"resegment callback returned shape {refined.probs.shape}, expected {seed.probs.shape}"
        )
    channel = prob.objects.channel_of(object_id)
    if not np.any(refined.to_mask().ids == object_id):
        # The re-segmentation lost the object outright. Refinement may only
        # sharpen an existing detection, so keep the coarse probabilities.
        return prob
    refined_small = downsample2(refined.probs[channel].astype(np.float64))

    out = prob.probs.astype(np.float64)
    out[channel] = 0.0
    out[channel, r0 : r1 + 1, c0 : c1 + 1] = refined_small
    sums = out.sum(axis=0, keepdims=True)
    out = np.divide(out, sums, out=np.zeros_like(out), where=sums > 0)
    starved = sums[0] <= 0
    if np.any(starved):
        out[0][starved] = 1.0
    return ProbMap(prob.objects, out.astype(np.float32))
