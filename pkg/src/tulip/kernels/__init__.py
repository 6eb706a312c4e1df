"""Hot-kernel dispatch: numba-compiled loops with a pure-NumPy fallback.

The backend is chosen once at import time from the ``TULIP_BACKEND``
environment variable: ``numba`` (default when importable) or ``numpy``.
Everything above this layer calls ``kernels.<name>(...)`` and never needs
to know which implementation is live. ``benchmarks/bench_kernels.py``
times the two side by side.
"""

import os

from . import _numpy

_requested = os.environ.get("TULIP_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"TULIP_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = _numpy
        BACKEND = "numpy"

layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
sigmoid_fwd = _impl.sigmoid_fwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
pairwise_sigmoid_core = _impl.pairwise_sigmoid_core
adam_step = _impl.adam_step
scatter_add_rows = _impl.scatter_add_rows
rasterize = _impl.rasterize
bilinear_crop_resize = _impl.bilinear_crop_resize
gaussian_blur = _impl.gaussian_blur

KERNEL_NAMES = (
    "layernorm_fwd",
    "layernorm_bwd",
    "softmax_fwd",
    "softmax_bwd",
    "sigmoid_fwd",
    "gelu_fwd",
    "gelu_bwd",
    "pairwise_sigmoid_core",
    "adam_step",
    "scatter_add_rows",
    "rasterize",
    "bilinear_crop_resize",
    "gaussian_blur",
)
