"""Desk-scale unified image-text contrastive pretraining.

Subpackages: ``core`` (autodiff), ``losses`` (signed pairwise sigmoid
objectives), ``models`` (tiny transformer encoders/decoders), ``views``
(augmentation, EMA teacher, batch assembly), ``scenes`` (synthetic data
with exact ground truth), ``train`` (optimizer loop, checkpoints, evals),
``kernels`` (numba/numpy hot loops).
"""

__version__ = "0.1.0"
