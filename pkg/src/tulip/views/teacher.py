"""EMA teacher: a slow-moving snapshot of the student vision encoder."""

import math
from dataclasses import dataclass

import numpy as np

from ..core.tape import Tensor
from ..errors import ShapeError, TulipError


@dataclass
class TeacherState:
    """Parameter snapshot mirroring the student vision encoder."""

    params: dict  # name -> np.ndarray

    @classmethod
    def from_student(cls, student_params):
        return cls(params={k: np.array(t.data, copy=True)
                           for k, t in student_params.items()})


def ema_update(teacher, student_params, m):
    """theta_T <- m * theta_T + (1 - m) * theta_S, elementwise, all shapes.

    Returns a fresh TeacherState; gradients never flow through it.
    """
    if not 0.0 <= m <= 1.0:
        raise TulipError(f"EMA momentum {m} outside [0, 1]")
    if set(teacher.params) != set(student_params):
        raise TulipError("teacher/student parameter names differ")
    new = {}
    for name, old in teacher.params.items():
        s = student_params[name].data if isinstance(student_params[name], Tensor) \
            else np.asarray(student_params[name])
        if s.shape != old.shape:
            raise ShapeError("ema_update", old.shape, s.shape)
        new[name] = m * old + (1.0 - m) * s
    return TeacherState(params=new)


def ema_momentum(step, total_steps, schedule="cosine", m_start=0.992,
                 m_end=1.0, m_const=0.996):
    """Momentum schedule: cosine ramp m_start -> m_end, or a constant."""
    if schedule == "constant":
        return m_const
    if schedule != "cosine":
        raise TulipError(f"unknown EMA schedule {schedule!r}")
    if total_steps <= 1:
        return m_end
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return m_end - (m_end - m_start) * (math.cos(math.pi * frac) + 1.0) / 2.0


def bind_teacher(encoder, teacher):
    """Point an encoder's parameter dict at the teacher snapshot (no grad)."""
    prefix = None
    for k in teacher.params:
        prefix = k.split(".", 1)[0]
        break
    encoder.p = {k.split(".", 1)[1]: Tensor(v, requires_grad=False)
                 for k, v in teacher.params.items()}
    return encoder
