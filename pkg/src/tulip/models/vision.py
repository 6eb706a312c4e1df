"""Patch-transformer image encoder with attention pooling and map export."""

from dataclasses import dataclass

import numpy as np

from ..core import ops
from ..core.tape import Tensor
from ..errors import ShapeError, TulipError
from ..util import rng_from
from . import layers


@dataclass
class VisionEncoderConfig:
    image_size: int = 48
    patch_size: int = 8
    width: int = 96
    depth: int = 3
    heads: int = 4
    embed_dim: int = 128
    pool: str = "map"  # "map" (attention pooling) or "class-token"

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise TulipError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise TulipError("width must be divisible by heads")
        if self.pool not in ("map", "class-token"):
            raise TulipError(f"unknown pool mode {self.pool!r}")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def n_patches(self):
        return self.grid * self.grid


class VisionEncoder:
    """Patchify -> learned position embeddings -> pre-norm blocks -> pool.

    Accepts any square input whose side is a multiple of patch_size;
    position embeddings are bilinearly resized (as a constant linear map)
    for non-native grids, which is how local crops share the encoder.
    """

    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = rng_from(seed, "vision")
        p = {}
        d_patch = cfg.patch_size * cfg.patch_size * 3
        layers.init_linear(p, "patch", d_patch, cfg.width, rng, self.dtype)
        layers.param(p, "pos", (rng.standard_normal(
            (cfg.n_patches, cfg.width)) * 0.02).astype(self.dtype))
        if cfg.pool == "class-token":
            layers.param(p, "cls", np.zeros((1, cfg.width), dtype=self.dtype))
        for i in range(cfg.depth):
            layers.init_block(p, f"block{i}", cfg.width, self.dtype, rng)
        layers.init_norm(p, "outnorm", cfg.width, self.dtype)
        if cfg.pool == "map":
            layers.param(p, "poolq", (rng.standard_normal(
                (1, cfg.width)) * 0.02).astype(self.dtype))
            for proj in ("poolk", "poolv"):
                layers.init_linear(p, proj, cfg.width, cfg.width, rng, self.dtype)
        layers.init_linear(p, "head", cfg.width, cfg.embed_dim, rng, self.dtype)
        self.p = p
        self._interp_cache = {}

    def named_params(self, prefix="vision"):
        return {f"{prefix}.{k}": v for k, v in self.p.items()}

    def _pos_for_grid(self, grid):
        base = self.cfg.grid
        if grid == base:
            return self.p["pos"]
        key = grid
        if key not in self._interp_cache:
            self._interp_cache[key] = Tensor(
                _bilinear_grid_matrix(base, grid).astype(self.dtype))
        return ops.matmul(self._interp_cache[key], self.p["pos"])

    def patchify(self, pixels):
        """(N, S, S, 3) Tensor -> (N, L, patch*patch*3)."""
        n, h, w, c = pixels.shape
        ps = self.cfg.patch_size
        if h != w or h % ps or c != 3:
            raise ShapeError("patchify", pixels.shape, (n, h, h, 3))
        g = h // ps
        x = ops.reshape(pixels, (n, g, ps, g, ps, c))
        x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
        return ops.reshape(x, (n, g * g, ps * ps * c))

    def forward(self, pixels, attn_sink=None):
        """pixels: (N, S, S, 3) Tensor in [0, 1] at native or local size.

        Returns (embedding (N, embed_dim) unit-norm, patch features
        (N, L, width)). No silent resize: S must be a patch multiple.
        """
        p = self.p
        cfg = self.cfg
        if not isinstance(pixels, Tensor):
            pixels = Tensor(np.asarray(pixels, dtype=self.dtype))
        # center to [-1, 1]: the large shared background component would
        # otherwise dominate every patch embedding
        centered = ops.add(ops.smul(pixels, 2.0),
                           Tensor(np.asarray(-1.0, dtype=pixels.data.dtype)))
        x = layers.linear(p, "patch", self.patchify(centered))
        grid = int(np.sqrt(x.shape[1]))
        x = ops.add(x, self._pos_for_grid(grid))
        cls_sink = attn_sink if cfg.pool == "class-token" else None
        if cfg.pool == "class-token":
            n = x.shape[0]
            cls = ops.reshape(p["cls"], (1, 1, cfg.width))
            cls = ops.add(cls, Tensor(np.zeros((n, 1, cfg.width), dtype=self.dtype)))
            x = ops.concat([cls, x], axis=1)
        for i in range(cfg.depth):
            x = layers.block(p, f"block{i}", x, cfg.heads, attn_sink=cls_sink)
        x = layers.norm(p, "outnorm", x)
        if cfg.pool == "class-token":
            pooled, feats = _take_first(x)
        else:
            n, l, d = x.shape
            q = ops.add(ops.reshape(p["poolq"], (1, 1, d)),
                        Tensor(np.zeros((n, 1, d), dtype=self.dtype)))
            k = layers.linear(p, "poolk", x)
            v = layers.linear(p, "poolv", x)
            pool_sink = [] if attn_sink is not None else None
            pooled = layers.attention(q, k, v, cfg.heads, attn_sink=pool_sink)
            if attn_sink is not None:
                attn_sink.extend(pool_sink)
            pooled = ops.reshape(pooled, (n, d))
            feats = x
        emb = ops.l2_normalize(layers.linear(p, "head", pooled))
        return emb, feats


def _take_first(x):
    """Split (N, 1+L, D) into the leading token (N, D) and the rest."""
    n, l1, d = x.shape
    xt = ops.transpose(x, (1, 0, 2))
    flat = ops.reshape(xt, (l1, n * d))
    first = ops.reshape(ops.gather_rows(flat, np.array([0])), (n, d))
    rest = ops.reshape(ops.gather_rows(flat, np.arange(1, l1)), (l1 - 1, n, d))
    return first, ops.transpose(rest, (1, 0, 2))


def _bilinear_grid_matrix(src_grid, dst_grid):
    """(dst^2, src^2) interpolation matrix between square patch grids."""
    m = np.zeros((dst_grid * dst_grid, src_grid * src_grid))
    for dy in range(dst_grid):
        for dx in range(dst_grid):
            sy = (dy + 0.5) * src_grid / dst_grid - 0.5
            sx = (dx + 0.5) * src_grid / dst_grid - 0.5
            sy = min(max(sy, 0.0), src_grid - 1.0)
            sx = min(max(sx, 0.0), src_grid - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, src_grid - 1), min(x0 + 1, src_grid - 1)
            fy, fx = sy - y0, sx - x0
            row = dy * dst_grid + dx
            m[row, y0 * src_grid + x0] += (1 - fy) * (1 - fx)
            m[row, y0 * src_grid + x1] += (1 - fy) * fx
            m[row, y1 * src_grid + x0] += fy * (1 - fx)
            m[row, y1 * src_grid + x1] += fy * fx
    return m


def export_attention(encoder, pixels, upsample_to=None):
    """Per-head attention heatmaps of the pooling query, upsampled.

    Returns (maps (N, H, S, S) float arrays, per-patch weights
    (N, H, L)). Per-patch weights of each map sum to 1; block maps are
    averaged across transformer blocks in class-token mode (the map-pool
    mode has a single pooling attention).
    """
    sink = []
    encoder.forward(pixels, attn_sink=sink)
    cfg = encoder.cfg
    n = pixels.shape[0]
    if cfg.pool == "map":
        w = sink[-1][:, :, 0, :]  # (N, H, L)
    else:
        per_block = [a[:, :, 0, 1:] for a in sink]  # cls -> patches
        w = np.mean(per_block, axis=0)
        w = w / w.sum(axis=-1, keepdims=True)
    grid = int(np.sqrt(w.shape[-1]))
    size = upsample_to or pixels.shape[1]
    rep = size // grid
    maps = w.reshape(n, w.shape[1], grid, grid)
    maps = np.repeat(np.repeat(maps, rep, axis=2), rep, axis=3)
    return maps, w
