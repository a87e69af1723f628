"""Core value types shared across the pipeline.

Frames, masks, pyramids and probability maps are frozen wrappers around numpy
arrays. Constructors validate shape, dtype and range once, so downstream code
can rely on the invariants instead of re-checking them. Treat the wrapped
arrays as immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIN_FRAME_SIDE = 8


class DataError(ValueError):
    """Bad input data: malformed file, dimension mismatch, out-of-range value."""


def grid_shape(height: int, width: int, stride: int) -> tuple[int, int]:
    """Cell-grid shape covering a frame at the given stride (edge blocks may be partial)."""
    return (-(-height // stride), -(-width // stride))


@dataclass(frozen=True)
class ImageFrame:
    """One RGB frame: row-major (height, width, 3) uint8."""

    rgb: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.rgb, np.ndarray) or self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise DataError(f"frame must be an array of shape (h, w, 3), got {getattr(self.rgb, 'shape', None)}")
        if self.rgb.dtype != np.uint8:
            raise DataError(f"frame must be uint8, got {self.rgb.dtype}")
        h, w = self.rgb.shape[:2]
        if h < MIN_FRAME_SIDE or w < MIN_FRAME_SIDE:
            raise DataError(f"frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE} pixels, got {h}x{w}")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel object labels: (height, width) uint8, 0 = background."""

    ids: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.ids, np.ndarray) or self.ids.ndim != 2:
            raise DataError(f"mask must be an array of shape (h, w), got {getattr(self.ids, 'shape', None)}")
        if self.ids.dtype != np.uint8:
            raise DataError(f"mask must be uint8, got {self.ids.dtype}")

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]


@dataclass(frozen=True)
class ObjectSet:
    """The distinct nonzero ids of the first-frame mask, ascending. Never grows."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.ids) == 0:
            raise DataError("object set must not be empty")
        if any(not (1 <= i <= 255) for i in self.ids):
            raise DataError(f"object ids must be in 1..255, got {self.ids}")
        if list(self.ids) != sorted(set(self.ids)):
            raise DataError(f"object ids must be distinct and ascending, got {self.ids}")

    @classmethod
    def from_mask(cls, mask: LabelMask) -> "ObjectSet":
        present = np.unique(mask.ids)
        present = present[present > 0]
        if present.size == 0:
            raise DataError("first-frame mask contains no objects")
        return cls(tuple(int(i) for i in present))

    def __iter__(self):
        return iter(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def channel_of(self, obj: int) -> int:
        """Probability-map channel index for an object id (background is channel 0)."""
        return self.ids.index(obj) + 1


@dataclass(frozen=True)
class FeatureMap:
    """Dense float32 features on the cell grid of one stride: (channels, h, w)."""

    stride: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise DataError(f"stride must be >= 1, got {self.stride}")
        if not isinstance(self.data, np.ndarray) or self.data.ndim != 3:
            raise DataError("feature map data must have shape (channels, h, w)")
        if self.data.dtype != np.float32:
            raise DataError(f"feature map must be float32, got {self.data.dtype}")
        if not np.isfinite(self.data).all():
            raise DataError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeaturePyramid:
    """Feature maps keyed by stride, all describing the same source frame."""

    frame_height: int
    frame_width: int
    levels: dict[int, FeatureMap]

    def __post_init__(self) -> None:
        for stride, level in self.levels.items():
            if stride != level.stride:
                raise DataError(f"pyramid key {stride} holds a stride-{level.stride} map")
            expect = grid_shape(self.frame_height, self.frame_width, stride)
            if (level.height, level.width) != expect:
                raise DataError(
                    f"stride-{stride} level is {level.height}x{level.width}, "
                    f"expected {expect[0]}x{expect[1]} for a {self.frame_height}x{self.frame_width} frame"
                )

    def __getitem__(self, stride: int) -> FeatureMap:
        return self.levels[stride]


PROB_SUM_TOL = 1e-5


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel class distribution: (len(objects)+1, h, w) float32, channel 0 = background."""

    objects: ObjectSet
    probs: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.probs, np.ndarray) or self.probs.ndim != 3:
            raise DataError("probability map must have shape (classes, h, w)")
        if self.probs.dtype != np.float32:
            raise DataError(f"probability map must be float32, got {self.probs.dtype}")
        if self.probs.shape[0] != len(self.objects) + 1:
            raise DataError(
                f"probability map has {self.probs.shape[0]} channels for {len(self.objects)} objects"
            )
        if self.probs.min(initial=0.0) < 0.0:
            raise DataError("probabilities must be non-negative")
        sums = self.probs.sum(axis=0)
        err = float(np.abs(sums - 1.0).max(initial=0.0))
        if err > PROB_SUM_TOL:
            raise DataError(f"pixel probabilities must sum to 1 within {PROB_SUM_TOL}, worst error {err:.3g}")

    @property
    def height(self) -> int:
        return self.probs.shape[1]

    @property
    def width(self) -> int:
        return self.probs.shape[2]

    def to_mask(self) -> LabelMask:
        """Argmax labels; ties resolve to the lowest channel, so background wins ties."""
        winner = np.argmax(self.probs, axis=0)
        lut = np.array([0, *self.objects.ids], dtype=np.uint8)
        return LabelMask(lut[winner])

    @classmethod
    def from_mask(cls, mask: LabelMask, objects: ObjectSet) -> "ProbMap":
        """One-hot distribution from a label mask; unknown ids count as background."""
        probs = np.zeros((len(objects) + 1, mask.height, mask.width), dtype=np.float32)
        claimed = np.zeros((mask.height, mask.width), dtype=bool)
        for k, obj in enumerate(objects.ids):
            hit = mask.ids == obj
            probs[k + 1][hit] = 1.0
            claimed |= hit
        probs[0][~claimed] = 1.0
        return cls(objects, probs)


def diagonal(height: int, width: int) -> float:
    """Image diagonal in pixels, used for boundary tolerances and motion gates."""
    return math.sqrt(height * height + width * width)
