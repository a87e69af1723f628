"""Cross-scale feature fusion and self-attention context.

The top-down pass (classic feature-pyramid style) maps each level through a
lateral matrix and adds an upsampled, channel-adapted copy of the processed
coarser level. The bottom-up pass adds a 2x2 mean-pooled, channel-adapted
copy of the processed finer level. Per-level channel widths are preserved;
seeded adapter matrices translate between widths. With the mixing strength
and fusion gain both zero each pass leaves the pyramid bit-identical, which
keeps the component toggles cleanly separable.

Upsampling repeats cells and pooling groups 2x2 cell blocks, both aligned so
information never crosses a coarse-cell boundary.

The context stage runs dot-product self-attention over the stride-16 grid:
seeded per-cell maps produce query/key/probe vectors, attention rows are
softmax-normalized, and the output mixes the attended context back into the
input through a linear map whose left half is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import downsample2, upsample2
from .memory import attention_weights
from .seeds import rng_for
from .types import FeatureMap, FeaturePyramid


def _apply(matrix: np.ndarray, data: np.ndarray) -> np.ndarray:
    out = np.einsum("oc,chw->ohw", matrix.astype(np.float64), data.astype(np.float64))
    return out


@dataclass(frozen=True)
class NeckWeights:
    """Laterals (square, per level) and channel adapters between adjacent levels."""

    lateral: dict[int, np.ndarray]  # stride -> (c_s, c_s)
    down_adapt: dict[int, np.ndarray]  # dest stride -> (c_dest, c_src) from the coarser level
    up_adapt: dict[int, np.ndarray]  # dest stride -> (c_dest, c_src) from the finer level
    fuse_gain: float

    @classmethod
    def seeded(cls, channels: dict[int, int], seed: int, mix: float, fuse_gain: float) -> "NeckWeights":
        rng = rng_for(seed, "neck")

        def lateral(c: int) -> np.ndarray:
            bump = rng.standard_normal((c, c)) / np.sqrt(c)
            return np.eye(c) + mix * bump

        def adapt(c_dest: int, c_src: int) -> np.ndarray:
            return rng.standard_normal((c_dest, c_src)) / np.sqrt(c_src)

        lat = {s: lateral(c) for s, c in sorted(channels.items())}
        down = {8: adapt(channels[8], channels[16]), 4: adapt(channels[4], channels[8])}
        up = {8: adapt(channels[8], channels[4]), 16: adapt(channels[16], channels[8])}
        return cls(lateral=lat, down_adapt=down, up_adapt=up, fuse_gain=fuse_gain)

    @property
    def is_identity(self) -> bool:
        if self.fuse_gain != 0.0:
            return False
        return all(np.array_equal(m, np.eye(m.shape[0])) for m in self.lateral.values())


def fpn_topdown(pyr: FeaturePyramid, weights: NeckWeights) -> FeaturePyramid:
    """Coarse-to-fine fusion; returns a new pyramid with the same grids/widths."""
    if weights.is_identity:
        return pyr
    out: dict[int, FeatureMap] = {}
    prev: FeatureMap | None = None
    for stride in (16, 8, 4):
        level = pyr[stride]
        data = _apply(weights.lateral[stride], level.data)
        if prev is not None and weights.fuse_gain != 0.0:
            lifted = upsample2(prev.data.astype(np.float64), level.height, level.width)
            data = data + weights.fuse_gain * _apply(weights.down_adapt[stride], lifted)
        prev = FeatureMap(stride, data.astype(np.float32))
        out[stride] = prev
    return FeaturePyramid(pyr.frame_height, pyr.frame_width, out)


def pan_bottomup(pyr: FeaturePyramid, weights: NeckWeights) -> FeaturePyramid:
    """Fine-to-coarse fusion; 2x2 mean pooling carries detail upward."""
    if weights.fuse_gain == 0.0:
        return pyr
    out: dict[int, FeatureMap] = {}
    prev: FeatureMap | None = None
    for stride in (4, 8, 16):
        level = pyr[stride]
        data = level.data.astype(np.float64)
        if prev is not None:
            pooled = downsample2(prev.data.astype(np.float64))
            data = data + weights.fuse_gain * _apply(weights.up_adapt[stride], pooled)
        prev = FeatureMap(stride, data.astype(np.float32))
        out[stride] = prev
    return FeaturePyramid(pyr.frame_height, pyr.frame_width, out)


@dataclass(frozen=True)
class ContextWeights:
    """Self-attention maps for the stride-16 grid."""

    f_matrix: np.ndarray  # (c, c) query map
    g_matrix: np.ndarray  # (c, c) key map
    h_matrix: np.ndarray  # (c, c) probe map
    out_matrix: np.ndarray  # (c, 2c), applied to concat(input, context)

    @classmethod
    def seeded(cls, channels: int, seed: int, mix: float) -> "ContextWeights":
        rng = rng_for(seed, "context")
        scale = 1.0 / np.sqrt(channels)
        f = rng.standard_normal((channels, channels)) * scale
        g = rng.standard_normal((channels, channels)) * scale
        h = rng.standard_normal((channels, channels)) * scale
        out = np.concatenate([np.eye(channels), mix * rng.standard_normal((channels, channels)) * scale], axis=1)
        return cls(f, g, h, out)


def object_context(level: FeatureMap, weights: ContextWeights) -> FeatureMap:
    """Per-cell context via softmax attention over all cells of the level."""
    c, h, w = level.data.shape
    flat = level.data.reshape(c, -1).astype(np.float64)
    f = weights.f_matrix @ flat
    g = weights.g_matrix @ flat
    probe = weights.h_matrix @ flat
    attn = attention_weights(f, g)  # (cells, cells), rows sum to 1
    context = probe @ attn.T
    stacked = np.concatenate([flat, context], axis=0)
    out = weights.out_matrix @ stacked
    return FeatureMap(level.stride, out.reshape(c, h, w).astype(np.float32))
