"""Pure-NumPy reference implementations of the hot kernels.

Every function here has a numba twin in ``_numba.py`` with the same
signature and (up to floating-point rounding) the same output. These are
the fallback path when numba is unavailable or ``TULIP_BACKEND=numpy``.

Shape conventions: normalization/softmax kernels take 2-D arrays and act
on the last axis; callers flatten leading axes first.
"""

import numpy as np

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def layernorm_fwd(x, eps):
    """x (N, D) -> (y, rstd) with y = (x - mean) * rstd, rstd = 1/sqrt(var + eps)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return (xc * rstd).astype(x.dtype, copy=False), rstd[:, 0].astype(x.dtype, copy=False)


def layernorm_bwd(g, y, rstd):
    """Gradient wrt x given the normalized output y and per-row rstd."""
    d = y.shape[1]
    gm = g.mean(axis=1, keepdims=True)
    gym = np.sum(g * y, axis=1, keepdims=True) / d
    return (rstd[:, None] * (g - gm - y * gym)).astype(y.dtype, copy=False)


def softmax_fwd(x):
    """Row-wise stable softmax, x (N, D)."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(g, y):
    """Gradient wrt logits given softmax output y."""
    dot = np.sum(g * y, axis=1, keepdims=True)
    return (g - dot) * y


def sigmoid_fwd(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gelu_fwd(x):
    """tanh-approximated GELU."""
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_bwd(g, x):
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    th = np.tanh(inner)
    sech2 = 1.0 - th * th
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return g * (0.5 * (1.0 + th) + 0.5 * x * sech2 * dinner)


def pairwise_sigmoid_core(s, z, t, b):
    """Core of the signed pairwise sigmoid loss.

    s (N, M): similarity logits x_i . y_j
    z (N, M): int8 pair weights in {+1, -1, 0}
    t, b: temperature and bias scalars

    Returns (loss_sum, gz, gs_sum, g_sum) where
      loss_sum = sum over z!=0 of softplus(z * (-t*s + b))
      gz       = |z| * sigmoid(a) * z      (a = z * (-t*s + b))
      gs_sum   = sum(gz * s)
      g_sum    = sum(gz)
    Caller scales by 1/B and chains into dX, dY, dt, db.
    """
    zf = z.astype(s.dtype)
    m = np.abs(zf)
    a = zf * (-t * s + b)
    # softplus(a) = max(a, 0) + log1p(exp(-|a|)), stable at both tails
    loss_sum = float(np.sum(m * (np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a))))))
    gz = m * sigmoid_fwd(a) * zf
    return loss_sum, gz, float(np.sum(gz * s)), float(np.sum(gz))


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2, decay_factor):
    """Fused in-place AdamW step on flat float arrays.

    decay_factor is (1 - lr * weight_decay) for decayed parameters, 1.0 for
    excluded ones; decay is applied multiplicatively before the Adam delta so
    a zero-gradient step shrinks decayed parameters by exactly that factor.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    if decay_factor != 1.0:
        p *= decay_factor
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def scatter_add_rows(table, idx, g):
    """table[idx[i]] += g[i] for each row i (token-embedding backward)."""
    np.add.at(table, idx, g)


def rasterize(height, width, shapes, colors, background):
    """Rasterize filled shapes over a constant background, 2x2 supersampled.

    shapes (K, 4): [kind, cx, cy, r] with kind 0=circle, 1=square,
    2=triangle; cx, cy, r in pixel units of the output resolution.
    colors (K, 3); background (3,). Returns (H, W, 3) float32 in [0, 1].
    """
    ss = 2
    hh, ww = height * ss, width * ss
    yy = (np.arange(hh, dtype=np.float64)[:, None] + 0.5) / ss
    xx = (np.arange(ww, dtype=np.float64)[None, :] + 0.5) / ss
    img = np.empty((hh, ww, 3), dtype=np.float64)
    img[:] = background
    for k in range(shapes.shape[0]):
        kind, cx, cy, r = shapes[k]
        dx = xx - cx
        dy = yy - cy
        if kind == 0:
            mask = dx * dx + dy * dy <= r * r
        elif kind == 1:
            h = 0.89 * r
            mask = (np.abs(dx) <= h) & (np.abs(dy) <= h)
        else:
            # upward triangle inscribed in the radius-r circle
            top = cy - r
            base = cy + 0.5 * r
            half = 0.866 * r
            inside_y = (yy >= top) & (yy <= base)
            frac = np.clip((yy - top) / (base - top + 1e-12), 0.0, 1.0)
            mask = inside_y & (np.abs(dx) <= half * frac)
        img[mask] = colors[k]
    out = img.reshape(height, ss, width, ss, 3).mean(axis=(1, 3))
    return out.astype(np.float32)


def bilinear_crop_resize(src, y0, x0, y1, x1, out_h, out_w):
    """Resample the axis-aligned region [y0,y1]x[x0,x1] of src to (out_h, out_w).

    Region bounds are float pixel coordinates in src space. src (H, W, C)
    float32; output float32.
    """
    h, w = src.shape[0], src.shape[1]
    sy = (y1 - y0) / out_h
    sx = (x1 - x0) / out_w
    ys = y0 + (np.arange(out_h, dtype=np.float64) + 0.5) * sy - 0.5
    xs = x0 + (np.arange(out_w, dtype=np.float64) + 0.5) * sx - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0i = np.floor(ys).astype(np.int64)
    x0i = np.floor(xs).astype(np.int64)
    y1i = np.minimum(y0i + 1, h - 1)
    x1i = np.minimum(x0i + 1, w - 1)
    fy = (ys - y0i).astype(np.float32)[:, None, None]
    fx = (xs - x0i).astype(np.float32)[None, :, None]
    a = src[y0i[:, None], x0i[None, :]]
    b = src[y0i[:, None], x1i[None, :]]
    c = src[y1i[:, None], x0i[None, :]]
    d = src[y1i[:, None], x1i[None, :]]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return (top + (bot - top) * fy).astype(np.float32)


def gaussian_blur(img, sigma):
    """Separable Gaussian blur with reflect padding, radius = ceil(2*sigma)."""
    radius = int(np.ceil(2.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    k /= k.sum()
    k = k.astype(np.float32)
    pad = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    tmp = np.zeros_like(img)
    for i in range(2 * radius + 1):
        tmp += k[i] * pad[i:i + img.shape[0]]
    pad = np.pad(tmp, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for i in range(2 * radius + 1):
        out += k[i] * pad[:, i:i + img.shape[1]]
    return out
