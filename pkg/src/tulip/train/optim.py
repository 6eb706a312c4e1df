"""Adam with decoupled weight decay and global-norm gradient clipping."""

import numpy as np

from .. import kernels
from ..errors import TulipError


def clip_global_norm(grads, max_norm):
    """Scale the whole gradient dict so its global L2 norm is at most
    max_norm. Returns (grads, pre_clip_norm); at the boundary the post-clip
    norm equals max_norm exactly."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.vdot(g, g))
    norm = float(np.sqrt(sq))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * g.dtype.type(scale) for k, g in grads.items()}
    return grads, norm


class AdamW:
    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999),
                 eps=1e-8, excluded=None):
        """params: name -> Tensor. excluded: predicate(name) -> bool for
        parameters that never receive weight decay."""
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.excluded = excluded or (lambda name: False)
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, grads, lr=None):
        """One update; parameters without a gradient entry get zero grads
        (their moments decay and decay still applies)."""
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, tensor in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(tensor.data)
            elif g.shape != tensor.data.shape:
                raise TulipError(f"gradient shape mismatch for {name}")
            decay = 1.0 if self.excluded(name) \
                else 1.0 - lr * self.weight_decay
            p = tensor.data.reshape(-1)
            kernels.adam_step(
                p, np.ascontiguousarray(g, dtype=tensor.data.dtype).reshape(-1),
                self.m[name].reshape(-1), self.v[name].reshape(-1),
                float(lr), float(b1), float(b2), float(self.eps),
                float(bc1), float(bc2), float(decay))

    def state_arrays(self):
        out = {}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays, step):
        for k in self.params:
            self.m[k] = np.ascontiguousarray(arrays[f"opt.m.{k}"])
            self.v[k] = np.ascontiguousarray(arrays[f"opt.v.{k}"])
        self.t = int(step)


def warmup_lr(base_lr, step, warmup_steps):
    if warmup_steps <= 0 or step >= warmup_steps:
        return base_lr
    return base_lr * (step + 1) / warmup_steps
