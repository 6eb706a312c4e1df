"""Signed pairwise sigmoid contrastive losses and pair-weight assignment.

The pairwise loss over batch embeddings X, Y with weight matrix Z is

    L = -(1/B) * sum_{i,j : z_ij != 0} log sigmoid(-z_ij * (-t x_i.y_j + b))

with z_ij in {+1, -1, 0}: attract, repel, ignore. z_ij = 0 pairs contribute
nothing to the value or any gradient. Normalization is by B (the row
count), not by the number of unmasked pairs.

Weight builders encode the generated-view sign rules: a same-modality
matrix pairs originals (rows) against augmented views (columns, aligned by
index) and flips the diagonal to -1 for negative views; the cross-modal
matrix pairs image and text entries by source sample with the
exactly-one-side-negative XOR rule and masks both-negative pairs, whose
correspondence is unknown.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core.tape import Tensor, active_tape, register
from .errors import ShapeError, TulipError

DEFAULT_INIT_T = 10.0
DEFAULT_INIT_B = -10.0


@dataclass
class LossScalars:
    """Learnable temperature (log-space, so t > 0 always) and bias."""

    log_t: Tensor
    b: Tensor

    @classmethod
    def create(cls, init_t=DEFAULT_INIT_T, init_b=DEFAULT_INIT_B, dtype=np.float32):
        if init_t <= 0:
            raise TulipError("LossScalars: init_t must be positive")
        return cls(
            log_t=Tensor(np.array(np.log(init_t), dtype=dtype), requires_grad=True),
            b=Tensor(np.array(init_b, dtype=dtype), requires_grad=True),
        )

    @property
    def t(self):
        return float(np.exp(self.log_t.data))


@dataclass
class BatchProvenance:
    """Per-index modality, negative-view flag, and source-sample id."""

    modality: str  # "image" | "text"
    negative: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        self.negative = np.asarray(self.negative, dtype=bool)
        self.source = np.asarray(self.source, dtype=np.int64)
        if self.modality not in ("image", "text"):
            raise TulipError(f"unknown modality {self.modality!r}")
        if self.negative.shape != self.source.shape or self.negative.ndim != 1:
            raise ShapeError("BatchProvenance", self.negative.shape, self.source.shape)

    def __len__(self):
        return self.negative.size


class PairWeightMatrix:
    """B x M matrix of {+1, -1, 0} pair weights."""

    def __init__(self, z):
        z = np.asarray(z)
        if z.ndim != 2:
            raise ShapeError("PairWeightMatrix", z.shape)
        if not np.isin(z, (-1, 0, 1)).all():
            raise TulipError("PairWeightMatrix: entries must be in {+1, -1, 0}")
        self.z = z.astype(np.int8)

    @classmethod
    def standard(cls, b):
        """Plain contrastive sign matrix: +1 diagonal, -1 elsewhere."""
        z = -np.ones((b, b), dtype=np.int8)
        np.fill_diagonal(z, 1)
        return cls(z)

    @property
    def shape(self):
        return self.z.shape


def build_pair_weights_same_modality(prov_x, prov_y):
    """Sign matrix for originals (x side) vs index-aligned augmented views.

    z_ii is +1 unless view i is negative (then -1); off-diagonal pairs are
    -1 as in the standard loss. The x side must not contain negatives.
    """
    if len(prov_x) != len(prov_y):
        raise ShapeError("build_pair_weights_same_modality",
                         (len(prov_x),), (len(prov_y),))
    if prov_x.modality != prov_y.modality:
        raise TulipError("same-modality weights need matching modalities")
    if prov_x.negative.any():
        raise TulipError("x side must hold originals or positive views only")
    if not np.array_equal(prov_x.source, prov_y.source):
        raise TulipError("same-modality weights need index-aligned sources")
    b = len(prov_x)
    z = -np.ones((b, b), dtype=np.int8)
    diag = np.where(prov_y.negative, -1, 1).astype(np.int8)
    z[np.arange(b), np.arange(b)] = diag
    return PairWeightMatrix(z)


def build_pair_weights_cross_modal(prov_img, prov_txt, cross_sample_negatives="mask"):
    """Sign matrix for an image batch against a text batch, paired by source.

    Same source: +1 when neither side is negative, -1 when exactly one side
    is (the XOR rule), 0 when both are (correspondence unknown). Different
    sources: -1 when neither is negative; when either is, the pair is
    masked (0) by default or repelled with ``cross_sample_negatives='negative'``.
    """
    if prov_img.modality != "image" or prov_txt.modality != "text":
        raise TulipError("cross-modal weights need an image side and a text side")
    if cross_sample_negatives not in ("mask", "negative"):
        raise TulipError(f"unknown cross_sample_negatives mode {cross_sample_negatives!r}")
    if set(prov_img.source.tolist()) != set(prov_txt.source.tolist()):
        raise TulipError("cross-modal weights: unmatched source ids")
    same = prov_img.source[:, None] == prov_txt.source[None, :]
    neg_i = prov_img.negative[:, None]
    neg_j = prov_txt.negative[None, :]
    z = np.zeros((len(prov_img), len(prov_txt)), dtype=np.int8)
    z[same & ~neg_i & ~neg_j] = 1
    z[same & (neg_i ^ neg_j)] = -1
    any_neg = neg_i | neg_j
    z[~same & ~any_neg] = -1
    if cross_sample_negatives == "negative":
        z[~same & any_neg] = -1
    return PairWeightMatrix(z)


# ---------------------------------------------------------------------------
# fused loss ops
# ---------------------------------------------------------------------------

def _check_loss_inputs(x, y, z):
    if x.data.ndim != 2 or y.data.ndim != 2 or x.data.shape != y.data.shape:
        raise ShapeError("siglip_pairwise_loss", x.data.shape, y.data.shape)
    b = x.data.shape[0]
    if z.shape != (b, b):
        raise ShapeError("siglip_pairwise_loss", x.data.shape, z.shape)
    for name, emb in (("X", x), ("Y", y)):
        norms = np.linalg.norm(emb.data, axis=1)
        dev = np.abs(norms - 1.0).max() if norms.size else 0.0
        if dev > 1e-3:
            raise TulipError(
                f"siglip_pairwise_loss: {name} rows not unit-norm "
                f"(max deviation {dev:.2e})"
            )


def _siglip_fwd(args, params):
    x, y, log_t, b = args
    z, _chunk = params
    t = float(np.exp(log_t))
    s = x @ y.T
    loss_sum, _gz, _gs, _g = kernels.pairwise_sigmoid_core(s, z, float(t), float(b))
    return np.asarray(loss_sum / x.shape[0], dtype=x.dtype)


def _siglip_bwd(node, g):
    x, y, log_t, b = node.inputs
    z, _chunk = node.params
    s, gz, gs_sum, g_sum, t = node.ctx
    bsz = x.data.shape[0]
    scale = float(g) / bsz
    ds = (-t * scale) * gz
    gx = ds @ y.data if x.requires_grad else None
    gy = ds.T @ x.data if y.requires_grad else None
    glt = np.asarray(-t * gs_sum * scale, dtype=x.data.dtype) if log_t.requires_grad else None
    gb = np.asarray(g_sum * scale, dtype=x.data.dtype) if b.requires_grad else None
    return gx, gy, glt, gb


register("siglip_loss", _siglip_fwd, _siglip_bwd)


def siglip_pairwise_loss(x, y, scalars, weights):
    """Signed pairwise sigmoid loss over all B x B dot products.

    x, y: (B, d) row-normalized embedding Tensors. Gradients flow to x, y
    and to the loss scalars.
    """
    z = weights.z if isinstance(weights, PairWeightMatrix) else PairWeightMatrix(weights).z
    _check_loss_inputs(x, y, z)
    t = float(np.exp(scalars.log_t.data))
    bval = float(scalars.b.data)
    s = x.data @ y.data.T
    loss_sum, gz, gs_sum, g_sum = kernels.pairwise_sigmoid_core(s, z, t, bval)
    out = np.asarray(loss_sum / x.data.shape[0], dtype=x.data.dtype)
    inputs = (x, y, scalars.log_t, scalars.b)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in inputs):
        return tape.record("siglip_loss", inputs, out, params=(z, 0),
                           ctx=(s, gz, gs_sum, g_sum, t))
    return Tensor(out)


def _block_ranges(n, chunk):
    return [(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def _siglip_block_fwd(args, params):
    x, y, log_t, b = args
    z, chunk = params
    t = float(np.exp(log_t))
    bval = float(b)
    n = x.shape[0]
    loss_sum = 0.0
    for r0, r1 in _block_ranges(n, chunk):
        for c0, c1 in _block_ranges(n, chunk):
            s_blk = x[r0:r1] @ y[c0:c1].T
            part, _gz, _gs, _g = kernels.pairwise_sigmoid_core(
                s_blk, np.ascontiguousarray(z[r0:r1, c0:c1]), t, bval)
            loss_sum += part
    return np.asarray(loss_sum / n, dtype=x.dtype)


def _siglip_block_bwd(node, g):
    x, y, log_t, b = node.inputs
    z, chunk = node.params
    t = node.ctx
    n = x.data.shape[0]
    scale = float(g) / n
    gx = np.zeros_like(x.data)
    gy = np.zeros_like(y.data)
    gs_sum = 0.0
    g_sum = 0.0
    for r0, r1 in _block_ranges(n, chunk):
        for c0, c1 in _block_ranges(n, chunk):
            s_blk = x.data[r0:r1] @ y.data[c0:c1].T
            _part, gz, gs, gs0 = kernels.pairwise_sigmoid_core(
                s_blk, np.ascontiguousarray(z[r0:r1, c0:c1]), t, float(b.data))
            ds = (-t * scale) * gz
            gx[r0:r1] += ds @ y.data[c0:c1]
            gy[c0:c1] += ds.T @ x.data[r0:r1]
            gs_sum += gs
            g_sum += gs0
    glt = np.asarray(-t * gs_sum * scale, dtype=x.data.dtype) if log_t.requires_grad else None
    gb = np.asarray(g_sum * scale, dtype=x.data.dtype) if b.requires_grad else None
    return (gx if x.requires_grad else None,
            gy if y.requires_grad else None, glt, gb)


register("siglip_loss_blockwise", _siglip_block_fwd, _siglip_block_bwd)


def blockwise_siglip_loss(x, y, scalars, weights, chunk):
    """Same value and gradients as siglip_pairwise_loss, computed over
    row/column blocks so peak pairwise-logit memory is O(chunk^2).

    Blocks iterate in fixed row-major order; the backward pass recomputes
    per-block logits instead of retaining them.
    """
    if chunk <= 0:
        raise TulipError("blockwise_siglip_loss: chunk must be positive")
    z = weights.z if isinstance(weights, PairWeightMatrix) else PairWeightMatrix(weights).z
    _check_loss_inputs(x, y, z)
    chunk = int(min(chunk, x.data.shape[0]))
    t = float(np.exp(scalars.log_t.data))
    out = _siglip_block_fwd(
        [x.data, y.data, scalars.log_t.data, scalars.b.data], (z, chunk))
    inputs = (x, y, scalars.log_t, scalars.b)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in inputs):
        return tape.record("siglip_loss_blockwise", inputs, out,
                           params=(z, chunk), ctx=t)
    return Tensor(out)


# ---------------------------------------------------------------------------
# objective combiners
# ---------------------------------------------------------------------------

def contrastive_total(l_it, l_ii, l_tt):
    """Unweighted sum of the three contrastive terms."""
    from .core import ops
    return ops.add(ops.add(l_it, l_ii), l_tt)


def reconstruction_total(l_img, l_txt, lam_i, lam_t):
    """lam_i * L_image + lam_t * L_text; weights must be non-negative."""
    if lam_i < 0 or lam_t < 0:
        raise TulipError("reconstruction_total: negative weight")
    from .core import ops
    return ops.add(ops.smul(l_img, lam_i), ops.smul(l_txt, lam_t))


def tulip_total(l_cont, l_recons, lam_c, lam_r):
    """lam_c * L_contrastive + lam_r * L_reconstruction."""
    if lam_c < 0 or lam_r < 0:
        raise TulipError("tulip_total: negative weight")
    from .core import ops
    return ops.add(ops.smul(l_cont, lam_c), ops.smul(l_recons, lam_r))
