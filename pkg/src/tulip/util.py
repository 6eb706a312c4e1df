"""Small shared helpers: stable seed derivation and thread settings."""

import hashlib
import os

import numpy as np


def stable_seed(*parts):
    """Map ints/strings/nested tuples to a stable 63-bit seed.

    Unlike hash(), this is identical across processes and runs, which is
    what makes per-sample/per-epoch derived randomness reproducible.
    """
    h = hashlib.sha256()
    for p in _flatten(parts):
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little") >> 1


def _flatten(parts):
    for p in parts:
        if isinstance(p, (tuple, list)):
            yield from _flatten(p)
        else:
            yield p


def rng_from(*parts):
    return np.random.default_rng(stable_seed(*parts))


def worker_threads():
    """Worker count for view generation, from TULIP_THREADS (default 1)."""
    raw = os.environ.get("TULIP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TULIP_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def data_dir_default():
    """Dataset root from TULIP_DATA_DIR, if set."""
    return os.environ.get("TULIP_DATA_DIR")
