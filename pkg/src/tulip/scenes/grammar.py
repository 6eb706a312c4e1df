"""Symbolic scene descriptions with exact semantics.

A scene holds one or two object groups on a 2x2 grid plus a background
shade. Single-group scenes carry an explicit grid cell; two-group scenes
carry a spatial relation between the groups, and their layout (cells) is
derived canonically from that relation: left-of -> (0, 1),
right-of -> (1, 0), above -> (0, 2), below -> (2, 0). Sampling only draws
the left-of/above directions, so a sampled corpus never contains two
scenes that render to mirror-identical layouts; the right-of/below forms
arise from relation-swap edits.

Edits change exactly one semantic field. The semantic fields of a scene
are each group's shape/color/count, the background shade, the cell of a
single group, and the relation kind of a pair (whose cells are derived,
not independent fields).
"""

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import SceneError
from ..util import rng_from

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow")
COUNTS = (1, 2, 3, 4)
CELLS = (0, 1, 2, 3)  # top-left, top-right, bottom-left, bottom-right
RELATIONS = ("left-of", "right-of", "above", "below")
SAMPLED_RELATIONS = ("left-of", "above")
SHADES = ("light", "dark")

CANONICAL_CELLS = {
    "left-of": (0, 1),
    "right-of": (1, 0),
    "above": (0, 2),
    "below": (2, 0),
}

EDIT_KINDS = ("count-change", "color-change", "shape-change", "relation-swap")


@dataclass(frozen=True)
class ObjectGroup:
    shape: str
    color: str
    count: int
    cell: int


@dataclass(frozen=True)
class SceneSpec:
    groups: tuple
    relation: Optional[tuple]  # (0, kind, 1) or None
    background: str

    def __post_init__(self):
        validate_scene(self)

    def semantic_fields(self):
        fields = {"background": self.background}
        for i, g in enumerate(self.groups):
            fields[f"group{i}.shape"] = g.shape
            fields[f"group{i}.color"] = g.color
            fields[f"group{i}.count"] = g.count
        if self.relation is None:
            for i, g in enumerate(self.groups):
                fields[f"group{i}.cell"] = g.cell
        else:
            fields["relation"] = self.relation[1]
        return fields


@dataclass(frozen=True)
class EditOp:
    kind: str
    target: int
    value: object


def validate_scene(scene):
    if not 1 <= len(scene.groups) <= 2:
        raise SceneError(f"scene needs 1 or 2 object groups, got {len(scene.groups)}")
    for g in scene.groups:
        if g.shape not in SHAPES:
            raise SceneError(f"unknown shape {g.shape!r}")
        if g.color not in COLORS:
            raise SceneError(f"unknown color {g.color!r}")
        if g.count not in COUNTS:
            raise SceneError(f"count {g.count} outside 1..4")
        if g.cell not in CELLS:
            raise SceneError(f"cell {g.cell} outside the 2x2 grid")
    if scene.background not in SHADES:
        raise SceneError(f"unknown background shade {scene.background!r}")
    if len(scene.groups) == 2:
        if scene.relation is None:
            raise SceneError("two-group scenes must assert a relation")
        i, kind, j = scene.relation
        if (i, j) != (0, 1):
            raise SceneError(f"relation indices {(i, j)} out of range")
        if kind not in RELATIONS:
            raise SceneError(f"unknown relation {kind!r}")
        cells = (scene.groups[0].cell, scene.groups[1].cell)
        if cells != CANONICAL_CELLS[kind]:
            raise SceneError(
                f"cells {cells} inconsistent with relation {kind!r}")
        if scene.groups[0].cell == scene.groups[1].cell:
            raise SceneError("groups share a cell")
    elif scene.relation is not None:
        raise SceneError("single-group scenes cannot assert a relation")


def make_single(shape, color, count, cell, background):
    return SceneSpec(groups=(ObjectGroup(shape, color, count, cell),),
                     relation=None, background=background)


def make_pair(g0, g1, kind, background):
    """Build a two-group scene; the groups' cells follow from the relation."""
    c0, c1 = CANONICAL_CELLS[kind]
    return SceneSpec(
        groups=(ObjectGroup(g0[0], g0[1], g0[2], c0),
                ObjectGroup(g1[0], g1[1], g1[2], c1)),
        relation=(0, kind, 1), background=background)


def enumerate_scenes():
    """Every valid scene; the space is finite (18,816 states)."""
    for shade in SHADES:
        for shape, color, count in itertools.product(SHAPES, COLORS, COUNTS):
            for cell in CELLS:
                yield make_single(shape, color, count, cell, shade)
    for shade in SHADES:
        for a in itertools.product(SHAPES, COLORS, COUNTS):
            for b in itertools.product(SHAPES, COLORS, COUNTS):
                for kind in RELATIONS:
                    yield make_pair(a, b, kind, shade)


def sample_scene(seed):
    """Uniformly sample a valid scene; deterministic in the seed."""
    rng = rng_from(seed)
    shade = SHADES[rng.integers(len(SHADES))]

    def attrs():
        return (SHAPES[rng.integers(len(SHAPES))],
                COLORS[rng.integers(len(COLORS))],
                int(COUNTS[rng.integers(len(COUNTS))]))

    if rng.random() < 0.5:
        shape, color, count = attrs()
        return make_single(shape, color, count, int(rng.integers(4)), shade)
    kind = SAMPLED_RELATIONS[rng.integers(len(SAMPLED_RELATIONS))]
    return make_pair(attrs(), attrs(), kind, shade)


def field_diff(a, b):
    """Names of semantic fields that differ between two scenes."""
    fa, fb = a.semantic_fields(), b.semantic_fields()
    keys = set(fa) | set(fb)
    return sorted(k for k in keys if fa.get(k) != fb.get(k))


def applicable_edits(scene):
    """Every single-field edit valid for this scene."""
    edits = []
    for i, g in enumerate(scene.groups):
        for c in COUNTS:
            if c != g.count:
                edits.append(EditOp("count-change", i, c))
        for c in COLORS:
            if c != g.color:
                edits.append(EditOp("color-change", i, c))
        for s in SHAPES:
            if s != g.shape:
                edits.append(EditOp("shape-change", i, s))
    if scene.relation is not None:
        for kind in RELATIONS:
            if kind != scene.relation[1]:
                edits.append(EditOp("relation-swap", 0, kind))
    return edits


def semantic_edit(scene, op):
    """Apply one edit, producing a scene differing in exactly that field."""
    if op.kind not in EDIT_KINDS:
        raise SceneError(f"unknown edit kind {op.kind!r}")
    if op.kind == "relation-swap":
        if scene.relation is None:
            raise SceneError("relation-swap needs a scene with a relation")
        if op.value == scene.relation[1] or op.value not in RELATIONS:
            raise SceneError(f"relation-swap to {op.value!r} is not a change")
        c0, c1 = CANONICAL_CELLS[op.value]
        g0 = ObjectGroup(scene.groups[0].shape, scene.groups[0].color,
                         scene.groups[0].count, c0)
        g1 = ObjectGroup(scene.groups[1].shape, scene.groups[1].color,
                         scene.groups[1].count, c1)
        return SceneSpec(groups=(g0, g1), relation=(0, op.value, 1),
                         background=scene.background)
    if not 0 <= op.target < len(scene.groups):
        raise SceneError(f"edit target {op.target} out of range")
    g = scene.groups[op.target]
    attr = {"count-change": "count", "color-change": "color",
            "shape-change": "shape"}[op.kind]
    if getattr(g, attr) == op.value:
        raise SceneError(f"{op.kind} to {op.value!r} is not a change")
    domain = {"count": COUNTS, "color": COLORS, "shape": SHAPES}[attr]
    if op.value not in domain:
        raise SceneError(f"{op.kind}: invalid value {op.value!r}")
    new_g = ObjectGroup(
        shape=op.value if attr == "shape" else g.shape,
        color=op.value if attr == "color" else g.color,
        count=op.value if attr == "count" else g.count,
        cell=g.cell,
    )
    groups = tuple(new_g if k == op.target else gg
                   for k, gg in enumerate(scene.groups))
    return SceneSpec(groups=groups, relation=scene.relation,
                     background=scene.background)


def random_edit(scene, rng):
    """Pick one applicable edit uniformly (rng: np.random.Generator)."""
    edits = applicable_edits(scene)
    return edits[int(rng.integers(len(edits)))]
