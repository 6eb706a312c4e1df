"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import TulipError
from .tape import Tape, Tensor


@dataclass
class FDReport:
    """Outcome of one finite-difference comparison."""

    max_rel_err: float
    tolerance: float
    n_coords: int
    worst: tuple = ()  # (input index, flat coordinate)
    per_input: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_err={self.max_rel_err:.3e} "
                f"tol={self.tolerance:.1e} coords={self.n_coords}")


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_difference_check(f, inputs, step=1e-4, tolerance=1e-5):
    """Compare backward() against central differences for scalar f(*inputs).

    f takes len(inputs) Tensors and returns a scalar Tensor; it must be
    deterministic (two forward evaluations are compared bitwise and a
    mismatch raises). inputs are float arrays, perturbed elementwise with
    step h: (f(x+h) - f(x-h)) / 2h. Relative error uses the denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise TulipError("finite_difference_check: step must be positive")
    return _fd_run(f, inputs, step, tolerance, coords=None, seed=None)


def finite_difference_spot_check(f, inputs, step=1e-4, tolerance=1e-5,
                                 coords_per_input=5, seed=0):
    """finite_difference_check over a seeded random coordinate subset.

    For large parameter sets a full sweep is quadratic in size; this
    checks up to ``coords_per_input`` coordinates of each input against
    the same central-difference oracle.
    """
    if step <= 0:
        raise TulipError("finite_difference_spot_check: step must be positive")
    return _fd_run(f, inputs, step, tolerance, coords=coords_per_input,
                   seed=seed)


def _fd_run(f, inputs, step, tolerance, coords, seed):
    arrays = [np.array(x, dtype=np.float64) for x in inputs]

    def run(arrs):
        return float(f(*[Tensor(a, requires_grad=False) for a in arrs]).data)

    if run(arrays) != run(arrays):
        raise TulipError("finite_difference_check: f is non-deterministic")

    params = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = f(*params)
    grads = tape.backward(out)

    coord_rng = np.random.default_rng(seed) if coords is not None else None
    max_err = 0.0
    worst = ()
    per_input = []
    n = 0
    for i, (arr, p) in enumerate(zip(arrays, params)):
        analytic = np.asarray(grads.get(p, np.zeros_like(arr)))
        err_i = 0.0
        flat = arr.reshape(-1)
        ga = analytic.reshape(-1)
        if coords is None:
            picked = range(flat.size)
        else:
            k = min(coords, flat.size)
            picked = coord_rng.choice(flat.size, size=k, replace=False)
        for j in picked:
            keep = flat[j]
            flat[j] = keep + step
            fp = run(arrays)
            flat[j] = keep - step
            fm = run(arrays)
            flat[j] = keep
            numeric = (fp - fm) / (2.0 * step)
            e = _rel_err(ga[j], numeric)
            if e > max_err:
                max_err = e
                worst = (i, j)
            err_i = max(err_i, e)
            n += 1
        per_input.append(err_i)
    return FDReport(max_rel_err=max_err, tolerance=tolerance,
                    n_coords=n, worst=worst, per_input=per_input)
