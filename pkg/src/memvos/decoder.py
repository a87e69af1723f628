"""Per-object evidence decoding and probability aggregation.

Each object's evidence lives on the stride-16 grid: memory readout,
global/local distance maps, the downsampled previous-frame probability, and
the gated context features. A linear decoder turns the stack into one logit
map per object. Aggregation pins the background logit at zero, lifts all
logits to pixel resolution bilinearly, and only then applies the per-pixel
softmax, so class boundaries are interpolated in logit space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .grids import resize_bilinear
from .seeds import rng_for
from .types import ObjectSet, ProbMap


@dataclass(frozen=True)
class EvidenceStack:
    """Evidence maps for one object on the stride-16 grid; all in [0,1]."""

    stm: np.ndarray  # memory readout objectness
    fg_global: np.ndarray  # distance to first-frame foreground
    bg_global: np.ndarray  # distance to first-frame background
    fg_local: np.ndarray  # distance to previous-frame foreground
    bg_local: np.ndarray  # distance to previous-frame background
    prev: np.ndarray  # previous-frame object probability, downsampled
    neck: np.ndarray  # (c, h, w) context features

    def __post_init__(self) -> None:
        shape = self.stm.shape
        for name in ("fg_global", "bg_global", "fg_local", "bg_local", "prev"):
            field = getattr(self, name)
            if field.shape != shape:
                raise ValueError(f"{name} shape {field.shape} != stm shape {shape}")
            if field.min() < 0.0 or field.max() > 1.0:
                raise ValueError(f"{name} must lie in [0,1]")
        if self.stm.min() < 0.0 or self.stm.max() > 1.0:
            raise ValueError("stm must lie in [0,1]")
        if self.neck.shape[1:] != shape:
            raise ValueError(f"neck grid {self.neck.shape[1:]} != stm shape {shape}")


@dataclass(frozen=True)
class DecoderWeights:
    w_stm: float
    w_fg_global: float
    w_bg_global: float
    w_fg_local: float
    w_bg_local: float
    w_prev: float
    w_feat: float
    bias: float
    feat_vector: np.ndarray  # (c,), unit norm, reduces gated features to a scalar map

    @classmethod
    def from_config(cls, cfg: PipelineConfig, channels: int) -> "DecoderWeights":
        rng = rng_for(cfg.seed, "decoder")
        vec = rng.standard_normal(channels)
        vec /= np.linalg.norm(vec)
        return cls(
            w_stm=cfg.w_stm,
            w_fg_global=cfg.w_fg_global,
            w_bg_global=cfg.w_bg_global,
            w_fg_local=cfg.w_fg_local,
            w_bg_local=cfg.w_bg_local,
            w_prev=cfg.w_prev,
            w_feat=cfg.w_feat,
            bias=cfg.decoder_bias,
            feat_vector=vec,
        )


def decode_logits(stack: EvidenceStack, gate_gains: np.ndarray, weights: DecoderWeights) -> np.ndarray:
    """One logit map from the evidence stack. Foreground distances push down,
    background distances push up; the gated feature term is scalar-projected."""
    logit = (
        weights.w_stm * stack.stm.astype(np.float64)
        - weights.w_fg_global * stack.fg_global.astype(np.float64)
        + weights.w_bg_global * stack.bg_global.astype(np.float64)
        - weights.w_fg_local * stack.fg_local.astype(np.float64)
        + weights.w_bg_local * stack.bg_local.astype(np.float64)
        + weights.w_prev * stack.prev.astype(np.float64)
        + weights.bias
    )
    if weights.w_feat != 0.0:
        gated = gate_gains[:, None, None] * stack.neck.astype(np.float64)
        logit = logit + weights.w_feat * np.einsum("c,chw->hw", weights.feat_vector, gated)
    return logit.astype(np.float32)


def soft_aggregate(
    logit_maps: dict[int, np.ndarray], objects: ObjectSet, out_h: int, out_w: int
) -> ProbMap:
    """Background logit 0, bilinear lift of every object logit map to pixel
    resolution, then a per-pixel softmax."""
    if set(logit_maps) != set(objects.ids):
        raise ValueError(f"logit maps for {sorted(logit_maps)} do not cover objects {objects.ids}")
    lifted = [np.zeros((out_h, out_w))]
    for obj in objects.ids:
        lifted.append(resize_bilinear(logit_maps[obj].astype(np.float64), out_h, out_w))
    stack = np.stack(lifted)
    stack -= stack.max(axis=0, keepdims=True)
    np.exp(stack, out=stack)
    stack /= stack.sum(axis=0, keepdims=True)
    return ProbMap(objects, stack.astype(np.float32))
