"""Hand-seeded feature pyramid extraction.

Each pyramid level pools simple image statistics onto its cell grid: mean RGB,
mean horizontal/vertical gradient magnitude, and the normalized cell-center
coordinates. The remaining channels are filled by a seeded affine projection
of those base channels. The projection bias keeps feature vectors away from
zero even on completely flat frames.

Color and gradient channels are scaled by `color_gain`; downstream matching
turns squared feature distances into saturating scores, so the gain controls
how decisively two colors separate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .grids import block_mean
from .seeds import rng_for
from .types import DataError, FeatureMap, FeaturePyramid, ImageFrame, grid_shape

BASE_CHANNELS = 7
STRIDES = (4, 8, 16)


@dataclass(frozen=True)
class EmbedderSpec:
    channels: dict[int, int]
    include_position: bool = True
    position_weight: float = 1.0
    color_gain: float = 6.0
    seed: int = 0

    def __post_init__(self) -> None:
        for stride, c in self.channels.items():
            if c < BASE_CHANNELS + 1:
                raise DataError(f"stride-{stride} width {c} is below the {BASE_CHANNELS + 1} channel minimum")

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "EmbedderSpec":
        return cls(
            channels={4: cfg.channels_4, 8: cfg.channels_8, 16: cfg.channels_16},
            include_position=cfg.include_position,
            position_weight=cfg.position_weight,
            color_gain=cfg.color_gain,
            seed=cfg.seed,
        )


def filler_weights(spec: EmbedderSpec, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded affine projection (matrix, bias) filling channels beyond the base ones."""
    extra = spec.channels[stride] - BASE_CHANNELS
    rng = rng_for(spec.seed, "embedder", stride)
    matrix = rng.standard_normal((extra, BASE_CHANNELS)) / np.sqrt(BASE_CHANNELS)
    bias = 0.05 * rng.standard_normal(extra)
    return matrix, bias


def _base_channels(frame: ImageFrame, spec: EmbedderSpec, stride: int) -> np.ndarray:
    img = frame.rgb.astype(np.float64) / 255.0
    gray = img.mean(axis=2)
    gx = np.abs(np.gradient(gray, axis=1))
    gy = np.abs(np.gradient(gray, axis=0))
    stack = np.concatenate([np.moveaxis(img, 2, 0), gx[None], gy[None]], axis=0)
    pooled = block_mean(stack, stride) * spec.color_gain

    gh, gw = grid_shape(frame.height, frame.width, stride)
    xs = np.broadcast_to((np.arange(gw) + 0.5) / gw, (gh, gw))
    ys = np.broadcast_to(((np.arange(gh) + 0.5) / gh)[:, None], (gh, gw))
    if spec.include_position:
        pos = np.stack([xs, ys]) * spec.position_weight
    else:
        pos = np.zeros((2, gh, gw))
    return np.concatenate([pooled, pos], axis=0)


def extract_level(frame: ImageFrame, spec: EmbedderSpec, stride: int) -> FeatureMap:
    base = _base_channels(frame, spec, stride)
    matrix, bias = filler_weights(spec, stride)
    flat = base.reshape(BASE_CHANNELS, -1)
    filler = matrix @ flat + bias[:, None]
    data = np.concatenate([flat, filler], axis=0).reshape(spec.channels[stride], *base.shape[1:])
    return FeatureMap(stride, data.astype(np.float32))


def extract_pyramid(frame: ImageFrame, spec: EmbedderSpec) -> FeaturePyramid:
    levels = {stride: extract_level(frame, spec, stride) for stride in STRIDES}
    return FeaturePyramid(frame.height, frame.width, levels)
