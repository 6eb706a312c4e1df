"""The primitive operation set with registered gradient rules.

Primitives: matmul, add, sub, mul, smul (scalar), exp, log, sigmoid,
gelu (tanh form), softmax, layernorm, sum, mean, reshape, transpose,
concat, gather_rows, masked_fill. Binary elementwise ops broadcast over
leading axes (standard NumPy alignment); matmul broadcasts batch axes.

Each primitive validates shapes up front and raises ShapeError naming the
op and the offending shapes. log and softmax reject non-finite input.
"""

import numpy as np

from .. import kernels
from ..errors import NonFiniteError, ShapeError, TulipError
from .tape import Tensor, active_tape, register


def _result(op, inputs, out_data, params=None, ctx=None):
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        return tape.record(op, tuple(inputs), out_data, params, ctx)
    return Tensor(out_data, requires_grad=False, _leaf=False)


def _check_same_dtype(op, a, b):
    if a.data.dtype != b.data.dtype:
        raise TulipError(
            f"{op}: mixed dtypes {a.data.dtype} vs {b.data.dtype}"
        )


def _unbroadcast(g, shape):
    """Sum g down to ``shape`` (inverse of NumPy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(op, a.data.shape, b.data.shape) from None


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def _matmul_fwd(args, params):
    return args[0] @ args[1]


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _matmul_bwd(node, g):
    a, b = node.inputs
    ga = _unbroadcast(g @ _swap(b.data), a.data.shape) if a.requires_grad else None
    gb = _unbroadcast(_swap(a.data) @ g, b.data.shape) if b.requires_grad else None
    return ga, gb


register("matmul", _matmul_fwd, _matmul_bwd)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    try:
        np.broadcast_shapes(a.data.shape[:-2], b.data.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.data.shape, b.data.shape) from None
    _check_same_dtype("matmul", a, b)
    return _result("matmul", (a, b), a.data @ b.data)


# ---------------------------------------------------------------------------
# elementwise binary
# ---------------------------------------------------------------------------

def _add_fwd(args, params):
    return args[0] + args[1]


def _add_bwd(node, g):
    a, b = node.inputs
    return (
        _unbroadcast(g, a.data.shape) if a.requires_grad else None,
        _unbroadcast(g, b.data.shape) if b.requires_grad else None,
    )


def _sub_fwd(args, params):
    return args[0] - args[1]


def _sub_bwd(node, g):
    a, b = node.inputs
    return (
        _unbroadcast(g, a.data.shape) if a.requires_grad else None,
        _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
    )


def _mul_fwd(args, params):
    return args[0] * args[1]


def _mul_bwd(node, g):
    a, b = node.inputs
    ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
    return ga, gb


register("add", _add_fwd, _add_bwd)
register("sub", _sub_fwd, _sub_bwd)
register("mul", _mul_fwd, _mul_bwd)


def add(a, b):
    _broadcast_shape("add", a, b)
    _check_same_dtype("add", a, b)
    return _result("add", (a, b), a.data + b.data)


def sub(a, b):
    _broadcast_shape("sub", a, b)
    _check_same_dtype("sub", a, b)
    return _result("sub", (a, b), a.data - b.data)


def mul(a, b):
    _broadcast_shape("mul", a, b)
    _check_same_dtype("mul", a, b)
    return _result("mul", (a, b), a.data * b.data)


# ---------------------------------------------------------------------------
# scalar multiply
# ---------------------------------------------------------------------------

def _smul_fwd(args, params):
    return args[0] * params


def _smul_bwd(node, g):
    return (g * node.params,)


register("smul", _smul_fwd, _smul_bwd)


def smul(a, c):
    c = a.data.dtype.type(c)
    return _result("smul", (a,), a.data * c, params=c)


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------

def _exp_fwd(args, params):
    return np.exp(args[0])


def _exp_bwd(node, g):
    return (g * node.ctx,)


register("exp", _exp_fwd, _exp_bwd)


def exp(a):
    out = np.exp(a.data)
    return _result("exp", (a,), out, ctx=out)


def _log_fwd(args, params):
    return np.log(args[0])


def _log_bwd(node, g):
    return (g / node.inputs[0].data,)


register("log", _log_fwd, _log_bwd)


def log(a):
    if not np.isfinite(a.data).all():
        raise NonFiniteError("log: non-finite input")
    if (a.data <= 0).any():
        raise NonFiniteError("log: non-positive input")
    return _result("log", (a,), np.log(a.data))


def _sigmoid_fwd(args, params):
    return kernels.sigmoid_fwd(args[0])


def _sigmoid_bwd(node, g):
    s = node.ctx
    return (g * (s * (1.0 - s)),)


register("sigmoid", _sigmoid_fwd, _sigmoid_bwd)


def sigmoid(a):
    out = kernels.sigmoid_fwd(a.data)
    return _result("sigmoid", (a,), out, ctx=out)


def _gelu_fwd(args, params):
    return kernels.gelu_fwd(args[0])


def _gelu_bwd(node, g):
    return (kernels.gelu_bwd(np.ascontiguousarray(g), node.inputs[0].data),)


register("gelu", _gelu_fwd, _gelu_bwd)


def gelu(a):
    return _result("gelu", (a,), kernels.gelu_fwd(a.data))


# ---------------------------------------------------------------------------
# softmax / layernorm over a named axis
# ---------------------------------------------------------------------------

def _rows(x, axis):
    """View x with ``axis`` last and flattened to 2-D."""
    axis = axis % x.ndim
    if axis != x.ndim - 1:
        x = np.moveaxis(x, axis, -1)
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1])), x.shape


def _unrows(y2d, moved_shape, axis, ndim):
    axis = axis % ndim
    y = y2d.reshape(moved_shape)
    if axis != ndim - 1:
        y = np.moveaxis(y, -1, axis)
    return np.ascontiguousarray(y)


def _softmax_fwd(args, params):
    x2d, moved = _rows(args[0], params)
    return _unrows(kernels.softmax_fwd(x2d), moved, params, args[0].ndim)


def _softmax_bwd(node, g):
    axis = node.params
    y = node.ctx
    g2d, moved = _rows(g, axis)
    y2d, _ = _rows(y, axis)
    gx = kernels.softmax_bwd(g2d, y2d)
    return (_unrows(gx, moved, axis, y.ndim),)


register("softmax", _softmax_fwd, _softmax_bwd)


def softmax(a, axis):
    if not np.isfinite(a.data).all():
        raise NonFiniteError("softmax: non-finite input")
    out = _softmax_fwd([a.data], axis)
    return _result("softmax", (a,), out, params=axis, ctx=out)


def _layernorm_fwd(args, params):
    axis, eps = params
    x2d, moved = _rows(args[0], axis)
    y2d, _ = kernels.layernorm_fwd(x2d, eps)
    return _unrows(y2d, moved, axis, args[0].ndim)


def _layernorm_bwd(node, g):
    axis, _eps = node.params
    y, rstd = node.ctx
    g2d, moved = _rows(g, axis)
    gx = kernels.layernorm_bwd(g2d, y, rstd)
    return (_unrows(gx, moved, axis, node.inputs[0].data.ndim),)


register("layernorm", _layernorm_fwd, _layernorm_bwd)


def layernorm(a, axis=-1, eps=1e-6):
    x2d, moved = _rows(a.data, axis)
    y2d, rstd = kernels.layernorm_fwd(x2d, eps)
    out = _unrows(y2d, moved, axis, a.data.ndim)
    return _result("layernorm", (a,), out, params=(axis, eps), ctx=(y2d, rstd))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _sum_fwd(args, params):
    axis, keepdims = params
    return args[0].sum(axis=axis, keepdims=keepdims)


def _expand_reduced(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(in_shape)), in_shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, in_shape)


def _sum_bwd(node, g):
    axis, keepdims = node.params
    shape = node.inputs[0].data.shape
    return (_expand_reduced(g, shape, axis, keepdims).astype(g.dtype, copy=False),)


def _mean_fwd(args, params):
    axis, keepdims = params
    return args[0].mean(axis=axis, keepdims=keepdims)


def _mean_bwd(node, g):
    axis, keepdims = node.params
    shape = node.inputs[0].data.shape
    n = np.prod(shape) if axis is None else shape[axis]
    gg = _expand_reduced(g, shape, axis, keepdims) / g.dtype.type(n)
    return (gg.astype(g.dtype, copy=False),)


register("sum", _sum_fwd, _sum_bwd)
register("mean", _mean_fwd, _mean_bwd)


def tsum(a, axis=None, keepdims=False):
    if axis is not None:
        axis = axis % a.data.ndim
    return _result("sum", (a,), a.data.sum(axis=axis, keepdims=keepdims),
                   params=(axis, keepdims))


def tmean(a, axis=None, keepdims=False):
    if axis is not None:
        axis = axis % a.data.ndim
    return _result("mean", (a,), a.data.mean(axis=axis, keepdims=keepdims),
                   params=(axis, keepdims))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def _reshape_fwd(args, params):
    return args[0].reshape(params)


def _reshape_bwd(node, g):
    return (g.reshape(node.inputs[0].data.shape),)


register("reshape", _reshape_fwd, _reshape_bwd)


def reshape(a, shape):
    shape = tuple(shape)
    if np.prod(shape, dtype=np.int64) != a.data.size:
        raise ShapeError("reshape", a.data.shape, shape)
    return _result("reshape", (a,), a.data.reshape(shape), params=shape)


def _transpose_fwd(args, params):
    return np.ascontiguousarray(args[0].transpose(params))


def _transpose_bwd(node, g):
    inv = np.argsort(node.params)
    return (np.ascontiguousarray(g.transpose(inv)),)


register("transpose", _transpose_fwd, _transpose_bwd)


def transpose(a, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError("transpose", a.data.shape, axes)
    return _result("transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)),
                   params=axes)


def _concat_fwd(args, params):
    return np.concatenate(args, axis=params)


def _concat_bwd(node, g):
    axis = node.params
    sizes = [t.data.shape[axis] for t in node.inputs]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))


register("concat", _concat_fwd, _concat_bwd)


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    axis = axis % tensors[0].data.ndim
    base = list(tensors[0].data.shape)
    for t in tensors[1:]:
        s = list(t.data.shape)
        if len(s) != len(base) or s[:axis] + s[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise ShapeError("concat", tensors[0].data.shape, t.data.shape)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _result("concat", tensors, out, params=axis)


# ---------------------------------------------------------------------------
# gather / masked fill
# ---------------------------------------------------------------------------

def _gather_fwd(args, params):
    return args[0][params]


def _gather_bwd(node, g):
    table = node.inputs[0].data
    idx = node.params
    gt = np.zeros_like(table)
    kernels.scatter_add_rows(
        gt, np.ascontiguousarray(idx.reshape(-1)),
        np.ascontiguousarray(g.reshape(-1, table.shape[1])),
    )
    return (gt,)


register("gather_rows", _gather_fwd, _gather_bwd)


def gather_rows(a, idx):
    """Select rows of a 2-D tensor by integer index; idx may be any shape."""
    if a.data.ndim != 2:
        raise ShapeError("gather_rows", a.data.shape, np.shape(idx))
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise TulipError(
            f"gather_rows: index out of range [0, {a.data.shape[0]})"
        )
    return _result("gather_rows", (a,), a.data[idx], params=idx)


def _masked_fill_fwd(args, params):
    mask, value = params
    return np.where(mask, args[0].dtype.type(value), args[0])


def _masked_fill_bwd(node, g):
    mask, _value = node.params
    gx = np.where(mask, g.dtype.type(0), g)
    return (_unbroadcast(gx, node.inputs[0].data.shape),)


register("masked_fill", _masked_fill_fwd, _masked_fill_bwd)


def masked_fill(a, mask, value):
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(a.data.shape, mask.shape)
    except ValueError:
        raise ShapeError("masked_fill", a.data.shape, mask.shape) from None
    out = np.where(mask, a.data.dtype.type(value), a.data)
    return _result("masked_fill", (a,), out, params=(mask, float(value)))


# ---------------------------------------------------------------------------
# composites (built entirely from the primitives above)
# ---------------------------------------------------------------------------

def l2_normalize(x, eps=1e-12):
    """Row-normalize the last axis: x / sqrt(sum(x^2) + eps)."""
    sq = tsum(mul(x, x), axis=x.data.ndim - 1, keepdims=True)
    eps_t = Tensor(np.full(sq.data.shape, eps, dtype=x.data.dtype))
    rnorm = exp(smul(log(add(sq, eps_t)), -0.5))
    return mul(x, rnorm)
