"""Tiny transformer encoders, reconstruction decoders, projection heads."""

from .decoders import (
    CausalTextDecoder,
    MaskedDecoderConfig,
    MaskedPatchDecoder,
    TextDecoderConfig,
    patch_pixel_targets,
)
from .text import TextEncoder, TextEncoderConfig
from .vision import VisionEncoder, VisionEncoderConfig, export_attention

__all__ = [
    "VisionEncoder", "VisionEncoderConfig", "export_attention",
    "TextEncoder", "TextEncoderConfig",
    "MaskedPatchDecoder", "MaskedDecoderConfig",
    "CausalTextDecoder", "TextDecoderConfig", "patch_pixel_targets",
]
