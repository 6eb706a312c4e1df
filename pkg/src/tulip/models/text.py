"""Non-causal text encoder with last-position pooling."""

from dataclasses import dataclass

import numpy as np

from ..core import ops
from ..core.tape import Tensor
from ..errors import TulipError
from ..util import rng_from
from . import layers


@dataclass
class TextEncoderConfig:
    context_length: int = 24
    vocab_size: int = 55
    width: int = 96
    depth: int = 2
    heads: int = 4
    embed_dim: int = 128
    pool: str = "last"

    def __post_init__(self):
        if self.context_length < 1:
            raise TulipError("context_length must be >= 1")
        if self.width % self.heads:
            raise TulipError("width must be divisible by heads")
        if self.pool != "last":
            raise TulipError("text encoder pools at the last position")


class TextEncoder:
    """Token + position embeddings -> full-attention blocks -> last token."""

    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = rng_from(seed, "text")
        p = {}
        layers.param(p, "tok", (rng.standard_normal(
            (cfg.vocab_size, cfg.width)) * 0.02).astype(self.dtype))
        layers.param(p, "pos", (rng.standard_normal(
            (cfg.context_length, cfg.width)) * 0.02).astype(self.dtype))
        for i in range(cfg.depth):
            layers.init_block(p, f"block{i}", cfg.width, self.dtype, rng)
        layers.init_norm(p, "outnorm", cfg.width, self.dtype)
        layers.init_linear(p, "head", cfg.width, cfg.embed_dim, rng, self.dtype)
        self.p = p

    def named_params(self, prefix="text"):
        return {f"{prefix}.{k}": v for k, v in self.p.items()}

    def forward(self, ids):
        """ids: (N, context_length) int array. Returns (N, embed_dim) unit-norm.

        No causal mask; pooling reads the final position, so padding
        participates in attention like any other token.
        """
        ids = np.asarray(ids)
        cfg = self.cfg
        if ids.ndim != 2 or ids.shape[1] != cfg.context_length:
            raise TulipError(
                f"token batch shape {ids.shape} != (N, {cfg.context_length})")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise TulipError("token id outside the vocabulary")
        p = self.p
        x = ops.add(ops.gather_rows(p["tok"], ids), p["pos"])
        for i in range(cfg.depth):
            x = layers.block(p, f"block{i}", x, cfg.heads)
        x = layers.norm(p, "outnorm", x)
        n, l, d = x.shape
        xt = ops.reshape(ops.transpose(x, (1, 0, 2)), (l, n * d))
        last = ops.reshape(ops.gather_rows(xt, np.array([l - 1])), (n, d))
        return ops.l2_normalize(layers.linear(p, "head", last))
