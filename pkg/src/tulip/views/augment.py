"""Pixel-space augmentation: random resized crop, flip, jitter, blur.

Transforms apply in a fixed order and are fully determined by the seed.
All outputs are float32 in [0, 1].
"""

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import TulipError
from ..util import rng_from


@dataclass
class AugmentPolicy:
    crop: bool = True
    crop_scale: tuple = (0.4, 1.0)
    crop_aspect: tuple = (0.75, 1.3333)
    flip: bool = True
    flip_prob: float = 0.5
    jitter: bool = True
    brightness: float = 0.15
    contrast: float = 0.15
    saturation: float = 0.15
    blur: bool = True
    blur_prob: float = 0.5
    blur_sigma: tuple = (0.3, 0.8)

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise TulipError(f"crop scale range {self.crop_scale} outside (0, 1]")

    @classmethod
    def identity(cls):
        return cls(crop=False, flip=False, jitter=False, blur=False)


def sample_crop_box(rng, h, w, scale_range, aspect_range):
    """Sample a crop box (y0, x0, y1, x1) covering an area fraction within
    scale_range; float coordinates in source pixels."""
    area = h * w
    for _ in range(10):
        frac = rng.uniform(*scale_range)
        aspect = np.exp(rng.uniform(np.log(aspect_range[0]),
                                    np.log(aspect_range[1])))
        cw = np.sqrt(area * frac * aspect)
        ch = np.sqrt(area * frac / aspect)
        if cw <= w and ch <= h:
            y0 = rng.uniform(0, h - ch)
            x0 = rng.uniform(0, w - cw)
            return y0, x0, y0 + ch, x0 + cw
    side = np.sqrt(area * scale_range[1])
    side = min(side, h, w)
    y0 = rng.uniform(0, h - side)
    x0 = rng.uniform(0, w - side)
    return y0, x0, y0 + side, x0 + side


def pixel_augment(image, policy, seed, out_size=None):
    """Crop -> flip -> color jitter -> blur, all driven by the seed.

    image: (H, W, 3) float32 in [0, 1]. out_size defaults to the input
    side. With every transform disabled and out_size left at the input
    size, the input comes back unchanged.
    """
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[:2]
    out = out_size or h
    rng = rng_from(seed)

    if policy.crop:
        y0, x0, y1, x1 = sample_crop_box(rng, h, w, policy.crop_scale,
                                         policy.crop_aspect)
        img = kernels.bilinear_crop_resize(img, y0, x0, y1, x1, out, out)
    elif out != h:
        img = kernels.bilinear_crop_resize(img, 0.0, 0.0, float(h), float(w),
                                           out, out)

    if policy.flip and rng.random() < policy.flip_prob:
        img = np.ascontiguousarray(img[:, ::-1])

    if policy.jitter:
        db = rng.uniform(-policy.brightness, policy.brightness)
        dc = rng.uniform(-policy.contrast, policy.contrast)
        ds = rng.uniform(-policy.saturation, policy.saturation)
        img = img + np.float32(db)
        mean = img.mean(dtype=np.float64).astype(np.float32)
        img = mean + (img - mean) * np.float32(1.0 + dc)
        gray = img.mean(axis=2, keepdims=True)
        img = gray + (img - gray) * np.float32(1.0 + ds)

    if policy.blur and rng.random() < policy.blur_prob:
        sigma = rng.uniform(*policy.blur_sigma)
        img = kernels.gaussian_blur(np.ascontiguousarray(img), sigma)

    return np.clip(img, 0.0, 1.0, out=img)


def multicrop(image, n_global, n_local, global_scale, local_scale,
              global_size, local_size, patch_size, policy, seed):
    """Global and local random crops of one image, all pixel-augmented.

    Returns (globals, locals): lists of float32 arrays at global_size and
    local_size respectively.
    """
    if n_global < 2:
        raise TulipError("multicrop needs at least 2 global views")
    if local_size % patch_size:
        raise TulipError(
            f"local size {local_size} not divisible by patch size {patch_size}")
    g_policy = _with_crop(policy, global_scale)
    l_policy = _with_crop(policy, local_scale)
    globals_ = [pixel_augment(image, g_policy, (seed, "g", k), out_size=global_size)
                for k in range(n_global)]
    locals_ = [pixel_augment(image, l_policy, (seed, "l", k), out_size=local_size)
               for k in range(n_local)]
    return globals_, locals_


def _with_crop(policy, scale):
    return AugmentPolicy(
        crop=True, crop_scale=tuple(scale), crop_aspect=policy.crop_aspect,
        flip=policy.flip, flip_prob=policy.flip_prob, jitter=policy.jitter,
        brightness=policy.brightness, contrast=policy.contrast,
        saturation=policy.saturation, blur=policy.blur,
        blur_prob=policy.blur_prob, blur_sigma=policy.blur_sigma)
