"""Reconstruction decoders: masked patch prediction and causal captioning.

Both route through the pooled contrastive embedding as an information
bottleneck: the patch decoder prepends a projection of it as a token the
masked patches can attend to, and the caption decoder uses it as the
position-0 input from which teacher-forced decoding starts.
"""

from dataclasses import dataclass

import numpy as np

from ..core import ops
from ..core.tape import Tensor
from ..errors import TulipError
from ..util import rng_from
from . import layers


@dataclass
class MaskedDecoderConfig:
    mask_ratio: float = 0.75
    width: int = 64
    depth: int = 2
    heads: int = 4

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise TulipError("mask_ratio must lie in [0, 1)")
        if self.width % self.heads:
            raise TulipError("width must be divisible by heads")


@dataclass
class TextDecoderConfig:
    width: int = 64
    depth: int = 2
    heads: int = 4

    def __post_init__(self):
        if self.width % self.heads:
            raise TulipError("width must be divisible by heads")


def patch_pixel_targets(images, patch_size, eps=1e-6):
    """Per-patch-normalized pixel targets: (N, L, patch*patch*3) float."""
    n, h, w, c = images.shape
    g = h // patch_size
    x = images.reshape(n, g, patch_size, g, patch_size, c)
    x = x.transpose(0, 1, 3, 2, 4, 5).reshape(n, g * g, -1)
    mu = x.mean(axis=2, keepdims=True)
    var = x.var(axis=2, keepdims=True)
    return ((x - mu) / np.sqrt(var + eps)).astype(images.dtype)


class MaskedPatchDecoder:
    """MAE-style decoder over encoder patch features plus the embedding."""

    def __init__(self, cfg, n_patches, enc_width, embed_dim, patch_dim,
                 seed=0, dtype=np.float32):
        self.cfg = cfg
        self.n_patches = n_patches
        self.patch_dim = patch_dim
        self.dtype = np.dtype(dtype)
        rng = rng_from(seed, "maskdec")
        p = {}
        layers.init_linear(p, "feat", enc_width, cfg.width, rng, self.dtype)
        layers.init_linear(p, "emb", embed_dim, cfg.width, rng, self.dtype)
        layers.param(p, "mask_token", (rng.standard_normal(
            (1, cfg.width)) * 0.02).astype(self.dtype))
        layers.param(p, "pos", (rng.standard_normal(
            (1 + n_patches, cfg.width)) * 0.02).astype(self.dtype))
        for i in range(cfg.depth):
            layers.init_block(p, f"block{i}", cfg.width, self.dtype, rng)
        layers.init_norm(p, "outnorm", cfg.width, self.dtype)
        layers.init_linear(p, "head", cfg.width, patch_dim, rng, self.dtype)
        self.p = p

    def named_params(self, prefix="maskdec"):
        return {f"{prefix}.{k}": v for k, v in self.p.items()}

    def mask_indices(self, n_samples, mask_seed):
        """Uniformly choose ceil(ratio * L) patches per sample to mask."""
        l = self.n_patches
        n_mask = int(np.ceil(self.cfg.mask_ratio * l))
        if n_mask >= l and n_mask > 0:
            raise TulipError("mask_ratio leaves no visible patches")
        rng = rng_from(mask_seed, "mae-mask")
        keep = np.ones((n_samples, l), dtype=bool)
        for i in range(n_samples):
            masked = rng.permutation(l)[:n_mask]
            keep[i, masked] = False
        return keep, n_mask

    def forward(self, patch_feats, embedding, target_pixels, mask_seed):
        """Returns (predicted patch pixels (N, L, D), masked-patch MSE).

        patch_feats (N, L, enc_width) and embedding (N, E) are live
        tensors from the encoder pass; target_pixels (N, S, S, 3) is a
        constant array. The loss is mean squared error over masked
        patches only, in per-patch-normalized pixel space.
        """
        p = self.p
        cfg = self.cfg
        n, l, _ = patch_feats.shape
        if l != self.n_patches:
            raise TulipError(f"expected {self.n_patches} patches, got {l}")
        patch_size = int(np.sqrt(self.patch_dim // 3))
        targets = patch_pixel_targets(np.asarray(target_pixels), patch_size)
        keep, n_mask = self.mask_indices(n, mask_seed)
        if n_mask == 0:
            zero = Tensor(np.asarray(0.0, dtype=self.dtype))
            return None, zero

        keep_f = Tensor(keep[:, :, None].astype(self.dtype))
        drop_f = Tensor((~keep)[:, :, None].astype(self.dtype))
        tokens = ops.add(ops.mul(layers.linear(p, "feat", patch_feats), keep_f),
                         ops.mul(drop_f, p["mask_token"]))
        bottleneck = ops.reshape(layers.linear(p, "emb", embedding),
                                 (n, 1, cfg.width))
        x = ops.add(ops.concat([bottleneck, tokens], axis=1), p["pos"])
        for i in range(cfg.depth):
            x = layers.block(p, f"block{i}", x, cfg.heads)
        x = layers.norm(p, "outnorm", x)
        _, patch_tokens = _split_first(x)
        pred = layers.linear(p, "head", patch_tokens)

        diff = ops.sub(pred, Tensor(targets))
        sq = ops.mul(ops.mul(diff, diff), drop_f)
        denom = float(n * n_mask * self.patch_dim)
        loss = ops.smul(ops.tsum(sq), 1.0 / denom)
        return pred, loss


def _split_first(x):
    n, l1, d = x.shape
    xt = ops.reshape(ops.transpose(x, (1, 0, 2)), (l1, n * d))
    rest = ops.reshape(ops.gather_rows(xt, np.arange(1, l1)), (l1 - 1, n, d))
    first = ops.reshape(ops.gather_rows(xt, np.array([0])), (n, d))
    return first, ops.transpose(rest, (1, 0, 2))


class CausalTextDecoder:
    """Causal transformer whose position-0 input is the projected embedding."""

    def __init__(self, cfg, vocab_size, context_length, embed_dim,
                 seed=0, dtype=np.float32):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.context_length = context_length
        self.dtype = np.dtype(dtype)
        rng = rng_from(seed, "textdec")
        p = {}
        layers.init_linear(p, "emb", embed_dim, cfg.width, rng, self.dtype)
        layers.param(p, "tok", (rng.standard_normal(
            (vocab_size, cfg.width)) * 0.02).astype(self.dtype))
        layers.param(p, "pos", (rng.standard_normal(
            (context_length, cfg.width)) * 0.02).astype(self.dtype))
        for i in range(cfg.depth):
            layers.init_block(p, f"block{i}", cfg.width, self.dtype, rng)
        layers.init_norm(p, "outnorm", cfg.width, self.dtype)
        # zero head: an untrained decoder emits exactly uniform logits
        layers.init_linear(p, "head", cfg.width, vocab_size, rng, self.dtype,
                           zero=True)
        self.p = p

    def named_params(self, prefix="textdec"):
        return {f"{prefix}.{k}": v for k, v in self.p.items()}

    def forward(self, embedding, target_ids, pad_id):
        """Teacher-forced next-token prediction conditioned on the embedding.

        target_ids (N, T) with T <= context_length - 1... position k
        predicts target_ids[:, k]; the input at k is target_ids[:, k-1]
        (position 0 sees only the embedding). Returns (logits (N, T, V),
        cross-entropy averaged over non-pad target positions).
        """
        target_ids = np.asarray(target_ids)
        n, t = target_ids.shape
        if t == 0 or not (target_ids != pad_id).any():
            raise TulipError("text_decode: empty target")
        if t > self.context_length - 1:
            raise TulipError(
                f"target length {t} exceeds context {self.context_length} - 1")
        p = self.p
        cfg = self.cfg
        bottleneck = ops.reshape(layers.linear(p, "emb", embedding),
                                 (n, 1, cfg.width))
        if t > 1:
            tok = ops.gather_rows(p["tok"], target_ids[:, :t - 1])
            x = ops.concat([bottleneck, tok], axis=1)
        else:
            x = bottleneck
        x = ops.add(x, ops.gather_rows(p["pos"], np.arange(t)))
        mask = layers.causal_mask(t)
        for i in range(cfg.depth):
            x = layers.block(p, f"block{i}", x, cfg.heads, mask=mask)
        x = layers.norm(p, "outnorm", x)
        logits = layers.linear(p, "head", x)

        flat = ops.reshape(logits, (n * t, self.vocab_size))
        logp = ops.log(ops.softmax(flat, axis=1))
        onehot = np.zeros((n * t, self.vocab_size), dtype=self.dtype)
        onehot[np.arange(n * t), target_ids.reshape(-1)] = 1.0
        picked = ops.tsum(ops.mul(logp, Tensor(onehot)), axis=1)
        not_pad = (target_ids.reshape(-1) != pad_id).astype(self.dtype)
        n_valid = float(not_pad.sum())
        nll = ops.smul(ops.tsum(ops.mul(picked, Tensor(not_pad))), -1.0 / n_valid)
        return logits, nll
