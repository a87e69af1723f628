"""Pipeline configuration: one flat `key = value` text file.

Every threshold, toggle and weight the pipeline exposes lives here. Parsing
rejects unknown keys, absent keys fall back to defaults, and serialization
round-trips exactly (floats are written with repr). Validation runs on every
construction, so a PipelineConfig instance is always in range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

from .types import DataError


@dataclass(frozen=True)
class PipelineConfig:
    # feature extraction
    channels_4: int = 16
    channels_8: int = 24
    channels_16: int = 32
    include_position: bool = True
    position_weight: float = 1.0
    color_gain: float = 4.0
    # foreground/background memory
    scheme: str = "a"
    stm_key_channels: int = 32
    stm_value_channels: int = 9
    key_gain: float = 6.0
    memory_interval: int = 5
    # global/local matching
    matching_bias: float = 0.0
    local_window_radius: int = 4
    # necks and context
    neck_mix: float = 0.0
    fuse_gain: float = 0.25
    oc_mix: float = 0.1
    gate_mix: float = 0.0
    # evidence decoder. Two balance constraints fix these jointly: the memory
    # weight exceeds the four matching weights combined, so the readout step at
    # half coverage decides boundary cells even when the reference frame has no
    # mixed cell nearby (min-distance scores are then one-sided and would drag
    # the crossing to the nearest reference fraction); and the bias equals half
    # of (foreground weights minus the rest), which makes the logit of a pure
    # object cell and a pure background cell exact negatives of each other.
    w_stm: float = 3.2
    w_fg_global: float = 1.25
    w_bg_global: float = 1.0
    w_fg_local: float = 0.4
    w_bg_local: float = 0.25
    w_prev: float = 0.9
    w_feat: float = 0.0
    decoder_bias: float = -1.85
    # post-processing
    temporal_tau: float = 0.2
    small_object_alpha: float = 0.02
    crop_margin: float = 0.5
    # inference
    scales: tuple[float, ...] = (1.0,)
    flip: bool = False
    use_stm: bool = True
    use_matching: bool = True
    use_fpn: bool = True
    use_pan: bool = True
    use_oc: bool = True
    use_postproc: bool = True
    use_ensemble: bool = False
    # ensemble fusion
    ensemble_weights: tuple[float, ...] = ()
    ensemble_bias: float = 0.0
    ensemble_lr: float = 1.0
    ensemble_iters: int = 200
    # evaluation
    boundary_tolerance: float = 0.008
    # rng
    seed: int = 0

    def __post_init__(self) -> None:
        for name, (check, legal) in _CHECKS.items():
            if not check(getattr(self, name)):
                raise DataError(f"{name} must be in {legal}")


def _closed(lo: float, hi: float) -> tuple[Callable, str]:
    return (lambda v: lo <= v <= hi, f"[{lo},{hi}]")


def _int_range(lo: int, hi: int) -> tuple[Callable, str]:
    return (lambda v: lo <= v <= hi, f"[{lo},{hi}]")


def _finite() -> tuple[Callable, str]:
    return (lambda v: math.isfinite(v), "(-inf,inf), finite")


_CHECKS: dict[str, tuple[Callable, str]] = {
    "channels_4": _int_range(8, 256),
    "channels_8": _int_range(8, 256),
    "channels_16": _int_range(8, 256),
    "position_weight": _closed(0.0, 16.0),
    "color_gain": (lambda v: 0.0 < v <= 64.0, "(0,64]"),
    "scheme": (lambda v: v in ("a", "b"), "{a,b}"),
    "stm_key_channels": _int_range(1, 256),
    "stm_value_channels": _int_range(2, 256),
    "key_gain": (lambda v: 0.0 < v <= 64.0, "(0,64]"),
    "memory_interval": _int_range(1, 1000),
    "matching_bias": _closed(0.0, 100.0),
    "local_window_radius": _int_range(1, 1024),
    "neck_mix": _closed(0.0, 1.0),
    "fuse_gain": _closed(0.0, 4.0),
    "oc_mix": _closed(0.0, 4.0),
    "gate_mix": _closed(0.0, 4.0),
    "w_stm": _finite(),
    "w_fg_global": _finite(),
    "w_bg_global": _finite(),
    "w_fg_local": _finite(),
    "w_bg_local": _finite(),
    "w_prev": _finite(),
    "w_feat": _finite(),
    "decoder_bias": _finite(),
    "temporal_tau": (lambda v: 0.0 < v <= 1.0, "(0,1]"),
    "small_object_alpha": (lambda v: 0.0 <= v < 1.0, "[0,1)"),
    "crop_margin": _closed(0.0, 2.0),
    "scales": (
        lambda v: 1 <= len(v) <= 8 and all(0.25 <= s <= 4.0 for s in v),
        "1..8 comma-separated floats, each in [0.25,4]",
    ),
    "ensemble_weights": (
        lambda v: len(v) <= 16 and all(math.isfinite(w) for w in v),
        "up to 16 comma-separated finite floats",
    ),
    "ensemble_bias": _finite(),
    "ensemble_lr": (lambda v: 0.0 < v <= 100.0, "(0,100]"),
    "ensemble_iters": _int_range(1, 100000),
    "boundary_tolerance": (lambda v: 0.0 < v < 1.0, "(0,1)"),
    "seed": (lambda v: 0 <= v < 2**63, "[0,2**63)"),
}


def _parse_value(key: str, kind: type, raw: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            if raw == "true":
                return True
            if raw == "false":
                return False
            raise ValueError
        if kind is tuple:
            if raw == "":
                return ()
            return tuple(float(part) for part in raw.split(","))
        return raw
    except ValueError:
        raise DataError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> PipelineConfig:
    """Parse `key = value` lines; '#' starts a comment, blank lines are skipped.

    Unknown keys are rejected, missing keys take their defaults, out-of-range
    values raise DataError naming the key and the legal range.
    """
    kinds = {f.name: (tuple if f.name in ("scales", "ensemble_weights") else type(f.default)) for f in fields(PipelineConfig)}
    kwargs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in kinds:
            raise DataError(f"line {lineno}: unknown key {key!r}")
        if key in kwargs:
            raise DataError(f"line {lineno}: duplicate key {key!r}")
        kwargs[key] = _parse_value(key, kinds[key], raw)
    return PipelineConfig(**kwargs)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def config_to_text(cfg: PipelineConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def read_config(path: str | Path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    return parse_config(text)


def write_config(path: str | Path, cfg: PipelineConfig) -> None:
    Path(path).write_text(config_to_text(cfg))
