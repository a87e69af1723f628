"""Frame loop: features, memory reads, matching, decoding, feedback.

A sequence is processed frame by frame. The first frame's mask seeds the
reference features, the instance gates and the memory banks; every later
frame is segmented from evidence alone, post-processed, and the cleaned mask
becomes the next frame's prior. Each augmentation view (one scale/flip
combination) keeps its own feature-level state so per-view inputs stay
self-consistent, and everything runs sequentially in a fixed order so two
runs with the same seed are bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from .config import PipelineConfig
from .decoder import DecoderWeights, EvidenceStack, decode_logits, soft_aggregate
from .features import EmbedderSpec, extract_pyramid
from .fusion import EnsembleModel, ensemble_apply
from .grids import block_mean, label_fractions, resize_bilinear, resize_nearest
from .matching import GateWeights, instance_gate, match_global_many, match_local_many
from .memory import (
    MemoryBank,
    ProjectionWeights,
    make_memory_kv,
    make_query_kv,
    memory_read,
    memory_write,
)
from .necks import ContextWeights, NeckWeights, fpn_topdown, object_context, pan_bottomup
from .postproc import crop_refine, temporal_filter
from .types import (
    MIN_FRAME_SIDE,
    DataError,
    FeatureMap,
    ImageFrame,
    LabelMask,
    ObjectSet,
    ProbMap,
)

STRIDE = 16
# Pixel matching runs on the finest pyramid level. Its reference sets then
# contain near-binary cells at every boundary offset, so min-distance scores
# pooled back to the decode grid vary smoothly with object coverage instead of
# jumping to whatever mixed cell the coarse reference grid happens to contain.
MATCH_STRIDE = 4


@dataclass(frozen=True)
class ModelVariant:
    """One member of the model pool: which evidence sources it uses."""

    name: str
    scheme: str
    use_stm: bool
    use_matching: bool


def model_variants(config: PipelineConfig) -> tuple[ModelVariant, ...]:
    """The models run on every frame: one normally, three when ensembling."""
    if config.use_ensemble:
        return (
            ModelVariant("stm-a", "a", True, config.use_matching),
            ModelVariant("stm-b", "b", True, config.use_matching),
            ModelVariant("match-only", "a", False, True),
        )
    return (ModelVariant("single", config.scheme, config.use_stm, config.use_matching),)


@dataclass(frozen=True)
class PipelineWeights:
    """Every seeded parameter family the frame loop uses."""

    embedder: EmbedderSpec
    stm: ProjectionWeights
    neck: NeckWeights
    context: ContextWeights
    gate: GateWeights
    decoder: DecoderWeights

    @classmethod
    def from_config(
        cls, config: PipelineConfig, frame_height: int | None = None, frame_width: int | None = None
    ) -> "PipelineWeights":
        """Build all weight families; with frame dimensions given, the key
        projection is centered on the features of a flat mid-gray frame run
        through the same necks and context stage."""
        channels = {4: config.channels_4, 8: config.channels_8, 16: config.channels_16}
        weights = cls(
            embedder=EmbedderSpec.from_config(config),
            stm=ProjectionWeights.seeded(
                config.channels_16,
                config.stm_key_channels,
                config.stm_value_channels,
                config.seed,
                config.key_gain,
            ),
            neck=NeckWeights.seeded(channels, config.seed, config.neck_mix, config.fuse_gain),
            context=ContextWeights.seeded(config.channels_16, config.seed, config.oc_mix),
            gate=GateWeights.seeded(config.channels_16, config.seed, config.gate_mix),
            decoder=DecoderWeights.from_config(config, config.channels_16),
        )
        if frame_height is None or frame_width is None:
            return weights
        gray = ImageFrame(np.full((frame_height, frame_width, 3), 128, dtype=np.uint8))
        level = _process_level(gray, config, weights, None).decode
        center = level.data.reshape(level.channels, -1).astype(np.float64).mean(axis=1)
        stm = ProjectionWeights.seeded(
            config.channels_16,
            config.stm_key_channels,
            config.stm_value_channels,
            config.seed,
            config.key_gain,
            center=center,
        )
        return replace(weights, stm=stm)


@dataclass
class ViewState:
    """Feature-level state for one augmentation view (scale, flip)."""

    scale: float
    flip: bool
    height: int
    width: int
    ref_levels: FrameLevels
    ref_indicators: dict[int, np.ndarray]
    ref_fine_indicators: dict[int, np.ndarray]
    gates: dict[int, np.ndarray]
    banks: dict[str, dict[int, MemoryBank]]
    prev_levels: FrameLevels
    prev_fractions: dict[int, np.ndarray]
    prev_fine_fractions: dict[int, np.ndarray]


@dataclass
class EngineState:
    """Everything carried between frames of one sequence."""

    config: PipelineConfig
    objects: ObjectSet
    weights: PipelineWeights
    variants: tuple[ModelVariant, ...]
    views: list[ViewState]
    frame_height: int
    frame_width: int
    frame_idx: int
    prev_mask: LabelMask


@dataclass(frozen=True)
class SeqResult:
    """Per-frame outputs of one sequence run."""

    masks: list[LabelMask]
    probs: list[ProbMap]
    frame_times: list[float]
    config: PipelineConfig
    trace: list[dict[str, np.ndarray]] | None


def _scaled_dims(height: int, width: int, scale: float) -> tuple[int, int]:
    return (
        max(MIN_FRAME_SIDE, int(round(height * scale))),
        max(MIN_FRAME_SIDE, int(round(width * scale))),
    )


def _view_list(config: PipelineConfig) -> list[tuple[float, bool]]:
    views = [(float(s), False) for s in config.scales]
    if config.flip:
        views.extend((float(s), True) for s in config.scales)
    return views


def _resize_frame(frame: ImageFrame, out_h: int, out_w: int) -> ImageFrame:
    if (out_h, out_w) == (frame.height, frame.width):
        return frame
    planes = [
        resize_bilinear(frame.rgb[:, :, c].astype(np.float64), out_h, out_w) for c in range(3)
    ]
    return ImageFrame(np.clip(np.rint(np.stack(planes, axis=2)), 0, 255).astype(np.uint8))


def _prep_frame(frame: ImageFrame, out_h: int, out_w: int, flip: bool) -> ImageFrame:
    scaled = _resize_frame(frame, out_h, out_w)
    if flip:
        return ImageFrame(np.ascontiguousarray(scaled.rgb[:, ::-1]))
    return scaled


def _prep_ids(ids: np.ndarray, out_h: int, out_w: int, flip: bool) -> np.ndarray:
    scaled = resize_nearest(ids, out_h, out_w)
    if flip:
        return np.ascontiguousarray(scaled[:, ::-1])
    return scaled


@dataclass(frozen=True)
class FrameLevels:
    """The two per-frame feature maps the evidence stages consume: the decode
    grid (stride 16, context-enriched) and the fine matching grid."""

    decode: FeatureMap
    fine: FeatureMap


def _process_level(
    frame: ImageFrame,
    config: PipelineConfig,
    weights: PipelineWeights,
    trace: dict[str, np.ndarray] | None,
) -> FrameLevels:
    """Embed one frame and run the enabled necks."""
    pyr = extract_pyramid(frame, weights.embedder)
    if trace is not None:
        for stride in (4, 8, 16):
            trace[f"embed{stride}"] = pyr[stride].data
    if config.use_fpn:
        pyr = fpn_topdown(pyr, weights.neck)
        if trace is not None:
            for stride in (4, 8, 16):
                trace[f"fpn{stride}"] = pyr[stride].data
    if config.use_pan:
        pyr = pan_bottomup(pyr, weights.neck)
        if trace is not None:
            for stride in (4, 8, 16):
                trace[f"pan{stride}"] = pyr[stride].data
    level = pyr[16]
    if config.use_oc:
        level = object_context(level, weights.context)
        if trace is not None:
            trace["oc16"] = level.data
    return FrameLevels(decode=level, fine=pyr[MATCH_STRIDE])


def _fractions_by_object(
    ids: np.ndarray, objects: ObjectSet, stride: int = STRIDE
) -> dict[int, np.ndarray]:
    fractions = label_fractions(ids, objects.ids, stride)
    return {obj: fractions[i] for i, obj in enumerate(objects.ids)}


def init_state(frame: ImageFrame, first_mask: LabelMask, config: PipelineConfig) -> EngineState:
    """Seed all per-view state from the first frame and its ground-truth mask."""
    if (first_mask.height, first_mask.width) != (frame.height, frame.width):
        raise DataError(
            f"first mask size {(first_mask.height, first_mask.width)} does not match "
            f"frame size {(frame.height, frame.width)}"
        )
    objects = ObjectSet.from_mask(first_mask)
    weights = PipelineWeights.from_config(config, frame.height, frame.width)
    variants = model_variants(config)

    views: list[ViewState] = []
    for scale, flip in _view_list(config):
        vh, vw = _scaled_dims(frame.height, frame.width, scale)
        vframe = _prep_frame(frame, vh, vw, flip)
        vids = _prep_ids(first_mask.ids, vh, vw, flip)
        levels = _process_level(vframe, config, weights, None)
        level = levels.decode
        fractions = _fractions_by_object(vids, objects)
        fine_fractions = _fractions_by_object(vids, objects, MATCH_STRIDE)
        gates = {obj: instance_gate(level, fractions[obj], weights.gate) for obj in objects}
        all_banks: dict[str, dict[int, MemoryBank]] = {}
        for variant in variants:
            if not variant.use_stm:
                continue
            banks: dict[int, MemoryBank] = {}
            for obj in objects:
                maps = make_memory_kv(level, fractions[obj], weights.stm, variant.scheme)
                banks[obj] = memory_write(MemoryBank(config.memory_interval), 0, maps, obj)
            all_banks[variant.name] = banks
        views.append(
            ViewState(
                scale=scale,
                flip=flip,
                height=vh,
                width=vw,
                ref_levels=levels,
                ref_indicators=fractions,
                ref_fine_indicators=fine_fractions,
                gates=gates,
                banks=all_banks,
                prev_levels=levels,
                prev_fractions=dict(fractions),
                prev_fine_fractions=dict(fine_fractions),
            )
        )

    return EngineState(
        config=config,
        objects=objects,
        weights=weights,
        variants=variants,
        views=views,
        frame_height=frame.height,
        frame_width=frame.width,
        frame_idx=0,
        prev_mask=first_mask,
    )


def _pool_to_decode_grid(fine_map: np.ndarray) -> np.ndarray:
    """Mean-pool a fine-grid evidence map onto the stride-16 decode grid."""
    return block_mean(fine_map, STRIDE // MATCH_STRIDE).astype(np.float32)


def _matching_evidence(
    levels: FrameLevels, view: ViewState, config: PipelineConfig
) -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """All objects' pooled (fg_global, bg_global, fg_local, bg_local) maps.

    Variant-independent, so computed once per view and shared; the pairwise
    distances inside the matchers are shared across objects as well.
    """
    fine_radius = config.local_window_radius * (STRIDE // MATCH_STRIDE)
    glob = match_global_many(
        levels.fine, view.ref_levels.fine, view.ref_fine_indicators, config.matching_bias
    )
    local = match_local_many(
        levels.fine, view.prev_levels.fine, view.prev_fine_fractions, fine_radius,
        config.matching_bias,
    )
    return {
        obj: tuple(_pool_to_decode_grid(m) for m in (*glob[obj], *local[obj]))
        for obj in glob
    }


def _infer_objects(
    levels: FrameLevels,
    view: ViewState,
    variant: ModelVariant,
    state: EngineState,
    trace: dict[str, np.ndarray] | None,
    match_ev: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] | None,
) -> dict[int, np.ndarray]:
    """Per-object evidence gathering and decoding on one view's stride-16 grid."""
    config, weights = state.config, state.weights
    level = levels.decode
    zeros = np.zeros((level.height, level.width), dtype=np.float32)
    ones = np.ones(level.channels)
    logits: dict[int, np.ndarray] = {}
    for obj in state.objects:
        if variant.use_stm:
            proxy = view.prev_fractions[obj] if variant.scheme == "b" else None
            query = make_query_kv(level, weights.stm, variant.scheme, proxy)
            stm_ev = memory_read(query, view.banks[variant.name][obj], obj)[-1]
        else:
            stm_ev = zeros
        if variant.use_matching:
            fg_g, bg_g, fg_l, bg_l = match_ev[obj]
            gains = view.gates[obj]
        else:
            fg_g = bg_g = fg_l = bg_l = zeros
            gains = ones
        stack = EvidenceStack(
            stm=stm_ev,
            fg_global=fg_g,
            bg_global=bg_g,
            fg_local=fg_l,
            bg_local=bg_l,
            prev=view.prev_fractions[obj],
            neck=level.data,
        )
        obj_logits = decode_logits(stack, gains, weights.decoder)
        if trace is not None:
            if variant.use_stm:
                trace[f"stm:{obj}"] = stm_ev
            if variant.use_matching:
                trace[f"fg_global:{obj}"] = fg_g
                trace[f"bg_global:{obj}"] = bg_g
                trace[f"fg_local:{obj}"] = fg_l
                trace[f"bg_local:{obj}"] = bg_l
                trace[f"gains:{obj}"] = gains
            trace[f"logits:{obj}"] = obj_logits
        logits[obj] = obj_logits
    return logits


def _lift_prob(prob: ProbMap, view: ViewState, out_h: int, out_w: int) -> np.ndarray:
    """View probabilities back at full resolution, float64, flip undone."""
    arr = prob.probs.astype(np.float64)
    if view.flip:
        arr = arr[:, :, ::-1]
    if (view.height, view.width) != (out_h, out_w):
        arr = np.stack([resize_bilinear(ch, out_h, out_w) for ch in arr])
    return arr


def _ensemble_model(config: PipelineConfig, n_models: int) -> EnsembleModel:
    if config.ensemble_weights:
        weights = tuple(float(w) for w in config.ensemble_weights)
        if len(weights) != n_models:
            raise DataError(
                f"{len(weights)} ensemble weights configured for {n_models} models"
            )
    else:
        weights = (1.0 / n_models,) * n_models
    return EnsembleModel(weights, config.ensemble_bias, config.ensemble_lr, config.ensemble_iters)


def _infer_frame(
    frame: ImageFrame,
    state: EngineState,
    config: PipelineConfig,
    trace: dict[str, np.ndarray] | None,
) -> tuple[ProbMap, list[FrameLevels]]:
    """Fused per-frame probabilities (mean over views, then model fusion)."""
    levels: list[FrameLevels] = []
    match_ev: list[dict | None] = []
    need_matching = any(v.use_matching for v in state.variants)
    for vi, view in enumerate(state.views):
        vframe = _prep_frame(frame, view.height, view.width, view.flip)
        vtrace = trace if (trace is not None and vi == 0) else None
        levels.append(_process_level(vframe, config, state.weights, vtrace))
        match_ev.append(
            _matching_evidence(levels[vi], view, config) if need_matching else None
        )

    variant_probs: list[ProbMap] = []
    for mi, variant in enumerate(state.variants):
        acc: np.ndarray | None = None
        for vi, view in enumerate(state.views):
            vtrace = trace if (trace is not None and vi == 0 and mi == 0) else None
            logits = _infer_objects(levels[vi], view, variant, state, vtrace, match_ev[vi])
            view_prob = soft_aggregate(logits, state.objects, view.height, view.width)
            lifted = _lift_prob(view_prob, view, state.frame_height, state.frame_width)
            acc = lifted if acc is None else acc + lifted
        acc /= len(state.views)
        acc /= acc.sum(axis=0, keepdims=True)
        variant_probs.append(ProbMap(state.objects, acc.astype(np.float32)))

    if config.use_ensemble:
        final = ensemble_apply(variant_probs, _ensemble_model(config, len(variant_probs)))
    else:
        final = variant_probs[0]
    return final, levels


def augment_infer(
    frame: ImageFrame, state: EngineState, config: PipelineConfig | None = None
) -> ProbMap:
    """One frame's fused probabilities without advancing the state.

    Runs the per-frame pipeline on every view (each scale, and the mirrored
    frame when flip is enabled, with its output mirrored back), averages the
    probabilities in a fixed order, re-normalizes, then applies model fusion
    if enabled. `config` defaults to the config the state was built with and
    must agree with it on architecture fields.
    """
    prob, _ = _infer_frame(frame, state, config or state.config, None)
    return prob


def _refine_once(state: EngineState, crop_frame: ImageFrame, seed: ProbMap) -> ProbMap:
    """Re-segment an upscaled crop against itself, seeded by its own argmax.

    Self-matching pins the seeded cells (distance zero, memory readout near
    the seed indicator); the doubled resolution re-draws the boundary.
    """
    config, weights, objects = state.config, state.weights, state.objects
    levels = _process_level(crop_frame, config, weights, None)
    level = levels.decode
    seed_ids = seed.to_mask().ids
    fractions = _fractions_by_object(seed_ids, objects)
    fine_fractions = _fractions_by_object(seed_ids, objects, MATCH_STRIDE)
    fine_radius = config.local_window_radius * (STRIDE // MATCH_STRIDE)
    zeros = np.zeros((level.height, level.width), dtype=np.float32)
    ones = np.ones(level.channels)
    if config.use_matching:
        glob = match_global_many(levels.fine, levels.fine, fine_fractions, config.matching_bias)
        local = match_local_many(
            levels.fine, levels.fine, fine_fractions, fine_radius, config.matching_bias
        )
    logits: dict[int, np.ndarray] = {}
    for obj in objects:
        if config.use_stm:
            maps = make_memory_kv(level, fractions[obj], weights.stm, config.scheme)
            bank = memory_write(MemoryBank(config.memory_interval), 0, maps, obj)
            proxy = fractions[obj] if config.scheme == "b" else None
            query = make_query_kv(level, weights.stm, config.scheme, proxy)
            stm_ev = memory_read(query, bank, obj)[-1]
        else:
            stm_ev = zeros
        if config.use_matching:
            fg_g, bg_g = (_pool_to_decode_grid(m) for m in glob[obj])
            fg_l, bg_l = (_pool_to_decode_grid(m) for m in local[obj])
            gains = instance_gate(level, fractions[obj], weights.gate)
        else:
            fg_g = bg_g = fg_l = bg_l = zeros
            gains = ones
        stack = EvidenceStack(
            stm=stm_ev,
            fg_global=fg_g,
            bg_global=bg_g,
            fg_local=fg_l,
            bg_local=bg_l,
            prev=fractions[obj],
            neck=level.data,
        )
        logits[obj] = decode_logits(stack, gains, weights.decoder)
    return soft_aggregate(logits, objects, crop_frame.height, crop_frame.width)


def _advance_state(
    state: EngineState, frame_idx: int, levels: list[FrameLevels], mask: LabelMask
) -> None:
    """Feed the post-processed mask back as every view's previous-frame state."""
    for view, flevels in zip(state.views, levels):
        vids = _prep_ids(mask.ids, view.height, view.width, view.flip)
        fractions = _fractions_by_object(vids, state.objects)
        for variant in state.variants:
            if not variant.use_stm:
                continue
            banks = view.banks[variant.name]
            for obj in state.objects:
                maps = make_memory_kv(
                    flevels.decode, fractions[obj], state.weights.stm, variant.scheme
                )
                memory_write(banks[obj], frame_idx, maps, obj)
        view.prev_levels = flevels
        view.prev_fractions = fractions
        view.prev_fine_fractions = _fractions_by_object(vids, state.objects, MATCH_STRIDE)
    state.prev_mask = mask
    state.frame_idx = frame_idx


def _step(
    state: EngineState, frame: ImageFrame, collect_trace: bool
) -> tuple[LabelMask, ProbMap, dict[str, np.ndarray] | None]:
    """Segment one frame, post-process, and advance the feedback state."""
    config = state.config
    frame_idx = state.frame_idx + 1
    trace: dict[str, np.ndarray] | None = {} if collect_trace else None
    prob, levels = _infer_frame(frame, state, config, trace)
    if config.use_postproc:
        refiner = partial(_refine_once, state)
        for obj in state.objects:
            prob = crop_refine(
                frame, prob, obj, config.small_object_alpha, config.crop_margin, refiner
            )
        mask = prob.to_mask()
        if frame_idx >= 2:
            mask = temporal_filter(mask, state.prev_mask, config.temporal_tau)
    else:
        mask = prob.to_mask()
    _advance_state(state, frame_idx, levels, mask)
    return mask, prob, trace


def run_sequence(
    frames: list[ImageFrame],
    first_mask: LabelMask,
    config: PipelineConfig,
    collect_trace: bool = False,
) -> SeqResult:
    """Segment a whole sequence given the first frame's ground-truth mask.

    Frame 0 is passed through verbatim. Component errors carry the frame
    index. With `collect_trace`, each inferred frame records its stage
    tensors (first view, first model) keyed by stage name.
    """
    if len(frames) == 0:
        raise DataError("sequence must contain at least one frame")
    size = (frames[0].height, frames[0].width)
    for t, frame in enumerate(frames):
        if (frame.height, frame.width) != size:
            raise DataError(f"frame {t}: size {(frame.height, frame.width)} != first frame {size}")

    start = time.perf_counter()
    try:
        state = init_state(frames[0], first_mask, config)
    except ValueError as exc:
        raise DataError(f"frame 0: {exc}") from exc
    masks = [first_mask]
    probs = [ProbMap.from_mask(first_mask, state.objects)]
    times = [time.perf_counter() - start]
    trace: list[dict[str, np.ndarray]] | None = [] if collect_trace else None

    for t in range(1, len(frames)):
        start = time.perf_counter()
        try:
            mask, prob, frame_trace = _step(state, frames[t], collect_trace)
        except ValueError as exc:
            raise DataError(f"frame {t}: {exc}") from exc
        masks.append(mask)
        probs.append(prob)
        times.append(time.perf_counter() - start)
        if trace is not None and frame_trace is not None:
            trace.append(frame_trace)

    return SeqResult(masks=masks, probs=probs, frame_times=times, config=config, trace=trace)
