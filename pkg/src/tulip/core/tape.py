"""Reverse-mode autodiff on NumPy arrays via an explicit operation tape.

A ``Tape`` is the computation record: an ordered list of primitive ops with
enough saved state to (a) replay the forward pass bit-for-bit and (b) run
the backward pass. Tensors are immutable value wrappers; ops only record
onto the innermost active tape and only when some input requires a
gradient, so gradient-free forwards (e.g. the EMA teacher) cost nothing.

Gradient accumulation over fan-out happens in fixed reverse-record order,
which makes backward() bitwise reproducible run to run.
"""

import itertools
import threading

import numpy as np

from ..errors import GraphError

_uid = itertools.count()
_tls = threading.local()

# op name -> forward fn(list[np.ndarray], params) -> np.ndarray
FORWARD = {}
# op name -> backward fn(node, g) -> tuple of grads aligned with node.inputs
BACKWARD = {}


def register(name, forward, backward):
    FORWARD[name] = forward
    BACKWARD[name] = backward


class Tensor:
    """Dense real array plus gradient metadata. Treat ``data`` as read-only."""

    __slots__ = ("data", "requires_grad", "uid", "is_leaf")

    def __init__(self, data, requires_grad=False, *, _leaf=True):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.uid = next(_uid)
        self.is_leaf = _leaf

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Node:
    __slots__ = ("op", "inputs", "out", "params", "ctx")

    def __init__(self, op, inputs, out, params, ctx):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.params = params
        self.ctx = ctx


class Tape:
    """Computation record. Confine one tape to one thread for its lifetime."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = getattr(_tls, "stack", None)
        if stack is None:
            stack = _tls.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tls.stack.pop()
        return False

    def record(self, op, inputs, out_data, params=None, ctx=None):
        out = Tensor(out_data, requires_grad=True, _leaf=False)
        self.nodes.append(Node(op, inputs, out, params, ctx))
        return out

    def replay(self):
        """Re-execute every recorded op from the current leaf values.

        Returns {uid: np.ndarray} of recomputed node outputs. Used to verify
        that the record reproduces identical outputs on identical inputs.
        """
        values = {}
        for node in self.nodes:
            args = [values.get(t.uid, t.data) for t in node.inputs]
            values[node.out.uid] = FORWARD[node.op](args, node.params)
        return values

    def backward(self, output):
        """Accumulate gradients of a scalar output wrt every grad-requiring leaf.

        Returns a Gradients mapping keyed by Tensor. Fan-out accumulation is
        by summation in reverse record order.
        """
        if output.data.size != 1:
            raise GraphError(
                f"backward() needs a scalar output, got shape {output.data.shape}"
            )
        produced = {node.out.uid for node in self.nodes}
        if output.uid not in produced:
            raise GraphError("output was not produced by this record")

        grads = {output.uid: np.ones_like(output.data)}
        leaf_grads = Gradients()
        for node in reversed(self.nodes):
            g = grads.pop(node.out.uid, None)
            if g is None:
                continue
            in_grads = BACKWARD[node.op](node, g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.is_leaf:
                    if t in leaf_grads:
                        leaf_grads[t] = leaf_grads[t] + gi
                    else:
                        leaf_grads[t] = gi
                else:
                    if t.uid in grads:
                        grads[t.uid] = grads[t.uid] + gi
                    else:
                        grads[t.uid] = gi
        leaf_grads.record = self
        return leaf_grads


class Gradients(dict):
    """Tensor -> gradient array map with a structured miss error."""

    record = None

    def __missing__(self, key):
        raise GraphError(
            f"tensor uid={getattr(key, 'uid', key)} is not a grad-requiring "
            "input of this record"
        )


def active_tape():
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


def constant(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=False)
