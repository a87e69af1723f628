"""Deterministic memory-and-matching video object segmentation."""

from .config import PipelineConfig, parse_config, config_to_text
from .types import DataError, ImageFrame, LabelMask, ObjectSet, ProbMap

__all__ = [
    "DataError",
    "ImageFrame",
    "LabelMask",
    "ObjectSet",
    "PipelineConfig",
    "ProbMap",
    "config_to_text",
    "parse_config",
]
