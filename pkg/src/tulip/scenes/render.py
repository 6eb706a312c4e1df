"""Rasterization of scene descriptions into float images."""

import numpy as np

from .. import kernels
from ..errors import SceneError
from ..util import rng_from
from .grammar import SHAPES

COLOR_RGB = {
    "red": (0.86, 0.16, 0.16),
    "green": (0.16, 0.70, 0.24),
    "blue": (0.20, 0.36, 0.88),
    "yellow": (0.94, 0.86, 0.20),
}
SHADE_BASE = {"light": 0.80, "dark": 0.28}
SHADE_JITTER = 0.10

_CELL_CENTERS = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))

# within-cell offsets (image fractions) for each object count
_COUNT_LAYOUT = {
    1: ((0.0, 0.0),),
    2: ((-0.125, 0.0), (0.125, 0.0)),
    3: ((-0.125, -0.11), (0.125, -0.11), (0.0, 0.115)),
    4: ((-0.125, -0.125), (0.125, -0.125), (-0.125, 0.125), (0.125, 0.125)),
}
_RADIUS_FRAC = 0.10
_JITTER_FRAC = 0.012


def render(scene, size, seed):
    """Rasterize a scene at ``size`` x ``size``; deterministic in all args.

    Jitter (per-shape position, realized background gray) comes from the
    seed only; the scene's semantics never change with the seed.
    """
    if size < 32:
        raise SceneError(f"render size {size} below the 32px minimum")
    r = _RADIUS_FRAC * size
    if 2 * r > 0.42 * (size / 2):
        raise SceneError("shapes cannot fit their grid cell at this size")
    rng = rng_from(seed)
    gray = SHADE_BASE[scene.background] + SHADE_JITTER * float(rng.random())
    background = np.full(3, gray, dtype=np.float64)

    shapes = []
    colors = []
    for g in scene.groups:
        cx, cy = _CELL_CENTERS[g.cell]
        kind = float(SHAPES.index(g.shape))
        col = COLOR_RGB[g.color]
        for ox, oy in _COUNT_LAYOUT[g.count]:
            jx, jy = (rng.random(2) * 2.0 - 1.0) * _JITTER_FRAC
            shapes.append((kind, (cx + ox + jx) * size, (cy + oy + jy) * size, r))
            colors.append(col)
    shapes_arr = np.array(shapes, dtype=np.float64).reshape(-1, 4)
    colors_arr = np.array(colors, dtype=np.float64).reshape(-1, 3)
    return kernels.rasterize(size, size, shapes_arr, colors_arr, background)


def positive_image_view(scene, size, seed):
    """Re-render the same scene under fresh jitter and background gray:
    identical semantics, different pixels."""
    return render(scene, size, seed)
