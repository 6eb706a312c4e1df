"""View engine: augmentation, EMA teacher, generated views, batch assembly."""

from .assemble import AssembledBatch, LossTerm, assemble_contrastive_batch
from .augment import AugmentPolicy, multicrop, pixel_augment, sample_crop_box
from .geco import (
    GecoRequest,
    GecoResponse,
    SyntheticSceneProvider,
    WireLoopbackProvider,
    geco_augment,
    request_from_line,
    request_to_line,
    response_from_line,
    response_to_line,
)
from .pipeline import ViewPipeline, ViewSet
from .teacher import TeacherState, bind_teacher, ema_momentum, ema_update

__all__ = [
    "AugmentPolicy", "pixel_augment", "multicrop", "sample_crop_box",
    "TeacherState", "ema_update", "ema_momentum", "bind_teacher",
    "GecoRequest", "GecoResponse", "SyntheticSceneProvider",
    "WireLoopbackProvider", "geco_augment",
    "request_to_line", "request_from_line", "response_to_line",
    "response_from_line",
    "ViewPipeline", "ViewSet",
    "AssembledBatch", "LossTerm", "assemble_contrastive_batch",
]
