"""Time-varying weights for the target-semantics term.

``t`` is the diffusion timestep: ``t == T`` is the noisiest step and ``t == 0``
the last one.  All five kinds integrate (continuously) to ``w0 * T``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRange, OutOfRange


class SchedulerKind(str, enum.Enum):
    STATIC = "static"
    LINEAR = "linear"
    COSINE = "cosine"
    INVERSE_LINEAR = "inverse_linear"
    SINE = "sine"


SCHEDULER_NAMES = tuple(k.value for k in SchedulerKind)


@dataclass(frozen=True)
class SchedulerSpec:
    kind: SchedulerKind
    w0: float
    T: int

    def __post_init__(self):
        object.__setattr__(self, "kind", SchedulerKind(self.kind))
        if not (math.isfinite(self.w0) and self.w0 >= 0):
            raise InvalidRange(f"w0 must be finite and >= 0, got {self.w0}")
        if int(self.T) != self.T or self.T < 2:
            raise InvalidRange(f"T must be an integer >= 2, got {self.T}")


def _shape(kind: SchedulerKind, r):
    # r = t / T in [0, 1]
    if kind is SchedulerKind.STATIC:
        return np.ones_like(r)
    if kind is SchedulerKind.LINEAR:
        return 2.0 * (1.0 - r)
    if kind is SchedulerKind.COSINE:
        return np.cos(np.pi * r) + 1.0
    if kind is SchedulerKind.INVERSE_LINEAR:
        return 2.0 * r
    return np.sin(np.pi * r - np.pi / 2) + 1.0


def evaluate(spec: SchedulerSpec, t):
    """Weight at timestep ``t`` (scalar or integer array)."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > spec.T):
        raise OutOfRange(f"timestep {t} outside [0, {spec.T}]")
    w = spec.w0 * _shape(spec.kind, t_arr / spec.T)
    # sin/cos round-off can dip a hair below zero at the endpoints
    w = np.maximum(w, 0.0)
    return float(w) if w.ndim == 0 else w


def discrete_mass(spec: SchedulerSpec) -> float:
    """Left Riemann sum of the weight over integer timesteps ``0..T-1``."""
    return float(np.sum(evaluate(spec, np.arange(spec.T))))
