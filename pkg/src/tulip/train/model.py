"""The full trainable bundle: encoders, heads, decoders, loss scalars."""

import numpy as np

from ..core.tape import Tensor
from ..losses import LossScalars
from ..models import (
    CausalTextDecoder,
    MaskedDecoderConfig,
    MaskedPatchDecoder,
    TextDecoderConfig,
    TextEncoder,
    TextEncoderConfig,
    VisionEncoder,
    VisionEncoderConfig,
)
from ..models import layers
from ..scenes import VOCAB


class TulipModel:
    def __init__(self, cfg, seed=None):
        seed = cfg.seed if seed is None else seed
        dtype = cfg.dtype
        self.cfg = cfg
        self.vision = VisionEncoder(VisionEncoderConfig(
            image_size=cfg.global_size, patch_size=cfg.vision_patch,
            width=cfg.vision_width, depth=cfg.vision_depth,
            heads=cfg.vision_heads, embed_dim=cfg.embed_dim),
            seed=seed, dtype=dtype)
        self.text = TextEncoder(TextEncoderConfig(
            context_length=cfg.text_context, vocab_size=len(VOCAB),
            width=cfg.text_width, depth=cfg.text_depth, heads=cfg.text_heads,
            embed_dim=cfg.embed_dim), seed=seed, dtype=dtype)
        self.maskdec = MaskedPatchDecoder(
            MaskedDecoderConfig(mask_ratio=cfg.mask_ratio,
                                width=cfg.maskdec_width,
                                depth=cfg.maskdec_depth,
                                heads=cfg.maskdec_heads),
            n_patches=self.vision.cfg.n_patches, enc_width=cfg.vision_width,
            embed_dim=cfg.embed_dim,
            patch_dim=cfg.vision_patch * cfg.vision_patch * 3,
            seed=seed, dtype=dtype)
        self.textdec = CausalTextDecoder(
            TextDecoderConfig(width=cfg.textdec_width, depth=cfg.textdec_depth,
                              heads=cfg.textdec_heads),
            vocab_size=len(VOCAB), context_length=cfg.text_context,
            embed_dim=cfg.embed_dim, seed=seed, dtype=dtype)
        self.heads = {}
        # identity start: the contrastive signal reaches the backbone from
        # step one instead of being absorbed by a random projection
        for name in ("ii_head", "tt_head"):
            layers.param(self.heads, f"{name}.w",
                         np.eye(cfg.embed_dim, dtype=dtype))
            layers.param(self.heads, f"{name}.b",
                         np.zeros(cfg.embed_dim, dtype=dtype))
        self.scalars = LossScalars.create(init_t=cfg.init_t,
                                          init_b=cfg.init_b,
                                          dtype=dtype)

    def named_params(self):
        p = {}
        p.update(self.vision.named_params("vision"))
        p.update(self.text.named_params("text"))
        p.update(self.maskdec.named_params("maskdec"))
        p.update(self.textdec.named_params("textdec"))
        p.update({f"heads.{k}": v for k, v in self.heads.items()})
        p["loss.log_t"] = self.scalars.log_t
        p["loss.b"] = self.scalars.b
        return p

    def set_param(self, name, tensor):
        """Replace one named parameter Tensor in place (gradcheck hook)."""
        group, _, rest = name.partition(".")
        if group == "loss":
            setattr(self.scalars, rest, tensor)
        elif group == "heads":
            self.heads[rest] = tensor
        elif group in ("vision", "text", "maskdec", "textdec"):
            getattr(self, group).p[rest] = tensor
        else:
            raise KeyError(name)

    def load_arrays(self, arrays):
        """Overwrite every parameter from a name -> array mapping."""
        params = self.named_params()
        missing = set(params) - set(arrays)
        extra = {k for k in arrays if k in params and
                 arrays[k].shape != params[k].data.shape}
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} "
                             f"badshape={sorted(extra)}")
        for name, tensor in params.items():
            tensor.data = np.ascontiguousarray(arrays[name],
                                               dtype=tensor.data.dtype)

    def param_arrays(self):
        return {k: np.asarray(v.data) for k, v in self.named_params().items()}


def decay_excluded(name):
    """Weight decay skips loss scalars and normalization gains/biases."""
    return name.startswith("loss.") or name.endswith("norm.gain") \
        or name.endswith("norm.bias")
