"""Numba-compiled twins of the kernels in ``_numpy.py``.

Same signatures, loop-fused implementations. Compiled lazily with
``cache=True`` so repeat runs skip JIT cost. All kernels are serial:
the training loop owns its one core and results stay deterministic.
"""

import numpy as np
from numba import njit

from . import _numpy as _np_impl

_GELU_C = 0.7978845608028654
_GELU_A = 0.044715


@njit(cache=True)
def layernorm_fwd(x, eps):
    n, d = x.shape
    y = np.empty_like(x)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            xc = x[i, j] - mu
            var += xc * xc
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * r
    return y, rstd


@njit(cache=True)
def layernorm_bwd(g, y, rstd):
    n, d = y.shape
    out = np.empty_like(y)
    for i in range(n):
        gm = 0.0
        gym = 0.0
        for j in range(d):
            gm += g[i, j]
            gym += g[i, j] * y[i, j]
        gm /= d
        gym /= d
        r = rstd[i]
        for j in range(d):
            out[i, j] = r * (g[i, j] - gm - y[i, j] * gym)
    return out


@njit(cache=True)
def softmax_fwd(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = np.exp(x[i, j] - m)
            y[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(d):
            y[i, j] *= inv
    return y


@njit(cache=True)
def softmax_bwd(g, y):
    n, d = y.shape
    out = np.empty_like(y)
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += g[i, j] * y[i, j]
        for j in range(d):
            out[i, j] = (g[i, j] - dot) * y[i, j]
    return out


@njit(cache=True)
def sigmoid_fwd(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + np.exp(-v))
        else:
            e = np.exp(v)
            out[i] = e / (1.0 + e)
    return out.reshape(x.shape)


# GELU stays on the NumPy path even in the numba backend: the cost is one
# tanh per element either way, and NumPy's vectorized tanh beats a scalar
# libm loop on this CPU (see benchmarks/bench_kernels.py)
gelu_fwd = _np_impl.gelu_fwd
gelu_bwd = _np_impl.gelu_bwd


@njit(cache=True)
def pairwise_sigmoid_core(s, z, t, b):
    n, m = s.shape
    gz = np.zeros_like(s)
    loss_sum = 0.0
    gs_sum = 0.0
    g_sum = 0.0
    for i in range(n):
        for j in range(m):
            zij = z[i, j]
            if zij == 0:
                continue
            a = zij * (-t * s[i, j] + b)
            if a > 0.0:
                loss_sum += a + np.log1p(np.exp(-a))
                sig = 1.0 / (1.0 + np.exp(-a))
            else:
                e = np.exp(a)
                loss_sum += np.log1p(e)
                sig = e / (1.0 + e)
            gv = sig * zij
            gz[i, j] = gv
            gs_sum += gv * s[i, j]
            g_sum += gv
    return loss_sum, gz, gs_sum, g_sum


@njit(cache=True)
def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2, decay_factor):
    for i in range(p.size):
        mi = beta1 * m[i] + (1.0 - beta1) * g[i]
        vi = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        m[i] = mi
        v[i] = vi
        pi = p[i]
        if decay_factor != 1.0:
            pi *= decay_factor
        p[i] = pi - lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)


@njit(cache=True)
def scatter_add_rows(table, idx, g):
    for i in range(idx.size):
        row = idx[i]
        for j in range(g.shape[1]):
            table[row, j] += g[i, j]


@njit(cache=True, fastmath=True)
def rasterize(height, width, shapes, colors, background):
    ss = 2
    img = np.empty((height, width, 3), dtype=np.float32)
    nk = shapes.shape[0]
    for py in range(height):
        for px in range(width):
            acc0 = 0.0
            acc1 = 0.0
            acc2 = 0.0
            for sy in range(ss):
                for sx in range(ss):
                    y = py + (sy + 0.5) / ss
                    x = px + (sx + 0.5) / ss
                    c0 = background[0]
                    c1 = background[1]
                    c2 = background[2]
                    for k in range(nk):
                        kind = shapes[k, 0]
                        cx = shapes[k, 1]
                        cy = shapes[k, 2]
                        r = shapes[k, 3]
                        dx = x - cx
                        dy = y - cy
                        hit = False
                        if kind == 0.0:
                            hit = dx * dx + dy * dy <= r * r
                        elif kind == 1.0:
                            h = 0.89 * r
                            hit = abs(dx) <= h and abs(dy) <= h
                        else:
                            top = cy - r
                            base = cy + 0.5 * r
                            if top <= y <= base:
                                frac = (y - top) / (base - top + 1e-12)
                                if frac < 0.0:
                                    frac = 0.0
                                elif frac > 1.0:
                                    frac = 1.0
                                hit = abs(dx) <= 0.866 * r * frac
                        if hit:
                            c0 = colors[k, 0]
                            c1 = colors[k, 1]
                            c2 = colors[k, 2]
                    acc0 += c0
                    acc1 += c1
                    acc2 += c2
            inv = 1.0 / (ss * ss)
            img[py, px, 0] = acc0 * inv
            img[py, px, 1] = acc1 * inv
            img[py, px, 2] = acc2 * inv
    return img


@njit(cache=True, fastmath=True)
def bilinear_crop_resize(src, y0, x0, y1, x1, out_h, out_w):
    h, w, c = src.shape
    out = np.empty((out_h, out_w, c), dtype=np.float32)
    sy = (y1 - y0) / out_h
    sx = (x1 - x0) / out_w
    for i in range(out_h):
        ys = y0 + (i + 0.5) * sy - 0.5
        if ys < 0.0:
            ys = 0.0
        elif ys > h - 1.0:
            ys = h - 1.0
        yi = int(np.floor(ys))
        y2 = min(yi + 1, h - 1)
        fy = ys - yi
        for j in range(out_w):
            xs = x0 + (j + 0.5) * sx - 0.5
            if xs < 0.0:
                xs = 0.0
            elif xs > w - 1.0:
                xs = w - 1.0
            xi = int(np.floor(xs))
            x2 = min(xi + 1, w - 1)
            fx = xs - xi
            for ch in range(c):
                a = src[yi, xi, ch]
                bb = src[yi, x2, ch]
                cc = src[y2, xi, ch]
                d = src[y2, x2, ch]
                top = a + (bb - a) * fx
                bot = cc + (d - cc) * fx
                out[i, j, ch] = top + (bot - top) * fy
    return out


@njit(cache=True, fastmath=True)
def gaussian_blur(img, sigma):
    radius = int(np.ceil(2.0 * sigma))
    width = 2 * radius + 1
    k = np.empty(width, dtype=np.float32)
    s = 0.0
    for i in range(width):
        v = np.exp(-0.5 * ((i - radius) / sigma) ** 2)
        k[i] = v
        s += v
    for i in range(width):
        k[i] /= s
    h, w, c = img.shape
    tmp = np.zeros_like(img)
    for y in range(h):
        for t in range(width):
            yy = y + t - radius
            if yy < 0:
                yy = -yy - 1
            elif yy >= h:
                yy = 2 * h - yy - 1
            for x in range(w):
                for ch in range(c):
                    tmp[y, x, ch] += k[t] * img[yy, x, ch]
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            for t in range(width):
                xx = x + t - radius
                if xx < 0:
                    xx = -xx - 1
                elif xx >= w:
                    xx = 2 * w - xx - 1
                for ch in range(c):
                    out[y, x, ch] += k[t] * img[y, xx, ch]
    return out
