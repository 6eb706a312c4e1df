"""Procedural synthetic scenes with exact symbolic ground truth."""

from .captions import VOCAB, Vocabulary, caption, paraphrase_positive, parse_caption
from .data import (
    Record,
    SceneDataset,
    generate_dataset,
    load_manifest,
    read_ppm,
    scene_from_json,
    scene_to_json,
    write_ppm,
)
from .grammar import (
    CELLS,
    COLORS,
    COUNTS,
    EDIT_KINDS,
    RELATIONS,
    SAMPLED_RELATIONS,
    SHADES,
    SHAPES,
    EditOp,
    ObjectGroup,
    SceneSpec,
    applicable_edits,
    enumerate_scenes,
    field_diff,
    random_edit,
    sample_scene,
    semantic_edit,
)
from .render import positive_image_view, render

__all__ = [
    "VOCAB", "Vocabulary", "caption", "parse_caption", "paraphrase_positive",
    "SceneSpec", "ObjectGroup", "EditOp", "sample_scene", "enumerate_scenes",
    "semantic_edit", "applicable_edits", "random_edit", "field_diff",
    "render", "positive_image_view",
    "generate_dataset", "load_manifest", "SceneDataset", "Record",
    "read_ppm", "write_ppm", "scene_to_json", "scene_from_json",
    "SHAPES", "COLORS", "COUNTS", "CELLS", "RELATIONS", "SAMPLED_RELATIONS",
    "SHADES", "EDIT_KINDS",
]
