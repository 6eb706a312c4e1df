"""Transformer building blocks on the autodiff core.

Parameters live in flat name -> Tensor dicts so the optimizer and
checkpoint code can address them uniformly. LayerNorm affine parameters
are always named ``<...>norm.gain`` / ``<...>norm.bias``; the optimizer's
weight-decay exclusion keys off that convention.
"""

import numpy as np

from ..core import ops
from ..core.tape import Tensor


def param(store, name, array):
    t = Tensor(np.ascontiguousarray(array), requires_grad=True)
    store[name] = t
    return t


def init_linear(store, name, d_in, d_out, rng, dtype, bias=True, zero=False):
    if zero:
        w = np.zeros((d_in, d_out), dtype=dtype)
    else:
        w = (rng.standard_normal((d_in, d_out)) * 0.02).astype(dtype)
    param(store, f"{name}.w", w)
    if bias:
        param(store, f"{name}.b", np.zeros(d_out, dtype=dtype))


def init_norm(store, name, d, dtype):
    param(store, f"{name}.gain", np.ones(d, dtype=dtype))
    param(store, f"{name}.bias", np.zeros(d, dtype=dtype))


def init_block(store, prefix, width, dtype, rng, mlp_ratio=4):
    init_norm(store, f"{prefix}.attnnorm", width, dtype)
    for proj in ("wq", "wk", "wv", "wo"):
        init_linear(store, f"{prefix}.{proj}", width, width, rng, dtype)
    init_norm(store, f"{prefix}.mlpnorm", width, dtype)
    init_linear(store, f"{prefix}.fc1", width, mlp_ratio * width, rng, dtype)
    init_linear(store, f"{prefix}.fc2", mlp_ratio * width, width, rng, dtype)


def linear(p, name, x):
    out = ops.matmul(x, p[f"{name}.w"])
    b = p.get(f"{name}.b")
    return ops.add(out, b) if b is not None else out


def norm(p, name, x, eps=1e-6):
    return ops.add(ops.mul(ops.layernorm(x, axis=-1, eps=eps),
                           p[f"{name}.gain"]), p[f"{name}.bias"])


def split_heads(x, heads):
    """(B, L, D) -> (B, H, L, D/H)"""
    b, l, d = x.shape
    x = ops.reshape(x, (b, l, heads, d // heads))
    return ops.transpose(x, (0, 2, 1, 3))


def merge_heads(x):
    """(B, H, L, dh) -> (B, L, D)"""
    b, h, l, dh = x.shape
    x = ops.transpose(x, (0, 2, 1, 3))
    return ops.reshape(x, (b, l, h * dh))


def attention(q, k, v, heads, mask=None, attn_sink=None):
    """Scaled dot-product attention over (B, L, D) tensors.

    mask: optional bool array broadcastable to (B, H, Lq, Lk); True marks
    positions to suppress. attn_sink: optional list collecting the softmax
    weights as plain arrays (for visualization export).
    """
    qh = split_heads(q, heads)
    kh = split_heads(k, heads)
    vh = split_heads(v, heads)
    dh = qh.shape[-1]
    scores = ops.smul(ops.matmul(qh, ops.transpose(kh, (0, 1, 3, 2))),
                      1.0 / np.sqrt(dh))
    if mask is not None:
        scores = ops.masked_fill(scores, mask, -1e9)
    attn = ops.softmax(scores, axis=3)
    if attn_sink is not None:
        attn_sink.append(np.asarray(attn.data))
    return merge_heads(ops.matmul(attn, vh))


def block(p, prefix, x, heads, mask=None, attn_sink=None):
    """Pre-norm transformer block: MHSA then a GELU MLP, both residual."""
    h = norm(p, f"{prefix}.attnnorm", x)
    q = linear(p, f"{prefix}.wq", h)
    k = linear(p, f"{prefix}.wk", h)
    v = linear(p, f"{prefix}.wv", h)
    x = ops.add(x, linear(p, f"{prefix}.wo",
                          attention(q, k, v, heads, mask, attn_sink)))
    h = norm(p, f"{prefix}.mlpnorm", x)
    h = linear(p, f"{prefix}.fc2", ops.gelu(linear(p, f"{prefix}.fc1", h)))
    return ops.add(x, h)


def causal_mask(length):
    return np.triu(np.ones((length, length), dtype=bool), k=1)
