"""Per-sample view construction: multicrop plus generated views.

Per-sample seeds derive as hash(run_seed, sample_id, epoch), so view
generation parallelizes over samples without any shared randomness and a
resumed run regenerates identical views. Generated views are cached per
(sample, epoch) in cached mode and keyed by step in online mode.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ProviderError, TulipError
from ..util import worker_threads
from .augment import AugmentPolicy, pixel_augment
from .geco import GecoRequest, geco_augment

# generated views keep their semantics: only mild cropping is safe
_GECO_CROP_SCALE = (0.9, 1.0)


@dataclass
class ViewSet:
    """All views of one sample entering a contrastive batch."""

    source: int
    seed: object
    global_views: list          # float32 arrays at global size
    local_views: list           # float32 arrays at local size
    text_views: dict            # name -> word list ("orig", "aug", "neg"?)
    negative_image: Optional[np.ndarray] = None
    geco_edits: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.global_views) < 2:
            raise TulipError("a view set needs at least 2 global views")


class ViewPipeline:
    def __init__(self, cfg, provider=None):
        """cfg: TrainConfig-like object (sizes, scales, counts, geco flags)."""
        self.cfg = cfg
        self.provider = provider
        self.policy = AugmentPolicy(
            crop_scale=(cfg.global_scale_min, cfg.global_scale_max),
            flip=getattr(cfg, "aug_flip", False),
            brightness=getattr(cfg, "aug_jitter", 0.08),
            contrast=getattr(cfg, "aug_jitter", 0.08),
            saturation=getattr(cfg, "aug_jitter", 0.08),
            blur=getattr(cfg, "aug_blur", True))
        self._cache = {}
        self._cache_epoch = None

    def _geco_response(self, image, words, sample_id, epoch, step):
        cfg = self.cfg
        if cfg.geco_mode == "cached":
            if self._cache_epoch != epoch:
                self._cache = {}
                self._cache_epoch = epoch
            key = sample_id
            if key in self._cache:
                return self._cache[key]
            seed = (cfg.seed, "geco", sample_id, epoch)
        else:
            key = None
            seed = (cfg.seed, "geco", sample_id, epoch, step)
        try:
            resp = geco_augment(GecoRequest(image=image, words=words, seed=seed),
                                self.provider)
        except ProviderError:
            resp = None  # drop generated views for this sample
        if key is not None:
            self._cache[key] = resp
        return resp

    def build(self, image, words, sample_id, epoch, step):
        """ViewSet for one sample. image: (S, S, 3) float32 dataset render."""
        cfg = self.cfg
        seed = (cfg.seed, "views", sample_id, epoch, step)
        resp = None
        if cfg.geco and self.provider is not None:
            resp = self._geco_response(image, words, sample_id, epoch, step)

        if cfg.local_size % cfg.vision_patch:
            raise TulipError("local size not divisible by the patch size")
        # the last global view comes from the generated positive when
        # available: a semantically identical re-render is a global view
        g_src1 = image
        g1_scale = (cfg.global_scale_min, cfg.global_scale_max)
        if resp is not None and resp.pos_image is not None:
            g_src1 = resp.pos_image
            g1_scale = _GECO_CROP_SCALE
        globals_ = [pixel_augment(image, self.policy, (seed, "g", k),
                                  out_size=cfg.global_size)
                    for k in range(cfg.n_global - 1)]
        globals_.append(pixel_augment(
            g_src1, _mild_policy(self.policy, g1_scale), (seed, "g-last"),
            out_size=cfg.global_size))
        locals_ = [pixel_augment(
            image, _mild_policy(self.policy,
                                (cfg.local_scale_min, cfg.local_scale_max)),
            (seed, "l", k), out_size=cfg.local_size)
            for k in range(cfg.n_local)]

        text_views = {"orig": list(words)}
        if resp is not None and resp.pos_words is not None:
            text_views["aug"] = list(resp.pos_words)
        else:
            from ..scenes import caption, parse_caption
            scene = parse_caption(words)
            text_views["aug"] = (caption(scene, (seed, "retemplate"))
                                 if scene is not None else list(words))
        neg_image = None
        edits = {}
        if resp is not None:
            if resp.neg_words is not None:
                text_views["neg"] = list(resp.neg_words)
            if resp.neg_image is not None:
                neg_image = pixel_augment(
                    resp.neg_image, _mild_policy(self.policy, _GECO_CROP_SCALE),
                    (seed, "neg"), out_size=cfg.global_size)
            edits = dict(resp.edits)
        return ViewSet(source=sample_id, seed=seed, global_views=globals_,
                       local_views=locals_, text_views=text_views,
                       negative_image=neg_image, geco_edits=edits)

    def build_batch(self, images, words_list, sample_ids, epoch, step):
        """ViewSets for a batch; parallel over samples when TULIP_THREADS > 1."""
        n = len(sample_ids)
        workers = min(worker_threads(), n)
        if workers <= 1:
            return [self.build(images[i], words_list[i], sample_ids[i],
                               epoch, step) for i in range(n)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(
                lambda i: self.build(images[i], words_list[i], sample_ids[i],
                                     epoch, step), range(n)))


def _mild_policy(base, scale):
    return AugmentPolicy(
        crop=True, crop_scale=tuple(scale), crop_aspect=base.crop_aspect,
        flip=base.flip, flip_prob=base.flip_prob, jitter=base.jitter,
        brightness=base.brightness, contrast=base.contrast,
        saturation=base.saturation, blur=base.blur, blur_prob=base.blur_prob,
        blur_sigma=base.blur_sigma)
