"""Noise-space vector algebra: projections and guidance compositions.

Every function treats the last axis as the noise vector, so a ``(d,)`` array
is a single vector and an ``(n, d)`` array is a batch of ``n`` independent
vectors (one per sampling chain).  Inner products run over the whole last
axis; callers holding image-shaped latents flatten them first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateReference, DimensionMismatch


class ManipulationMode(str, enum.Enum):
    ADDITION = "addition"
    REMOVAL = "removal"


def degenerate_threshold(d: int) -> float:
    return 1e-8 * np.sqrt(d)


def _check_dims(*arrays):
    d = arrays[0].shape[-1]
    for a in arrays[1:]:
        if a.shape[-1] != d:
            raise DimensionMismatch(f"dimension {a.shape[-1]} != {d}")


def _rowdot(a, b):
    return np.einsum("...i,...i->...", a, b)[..., None]


def project(v, onto):
    """Split ``v`` into the part parallel to ``onto`` and the remainder.

    Returns ``(parallel, perpendicular)`` with ``parallel + perpendicular == v``.
    Raises :class:`DegenerateReference` when any reference vector has norm
    at or below ``1e-8 * sqrt(d)``.
    """
    v = np.asarray(v, dtype=float)
    onto = np.asarray(onto, dtype=float)
    _check_dims(v, onto)
    sq = _rowdot(onto, onto)
    thresh = degenerate_threshold(v.shape[-1])
    if np.any(np.sqrt(sq) <= thresh):
        raise DegenerateReference(
            f"reference direction norm <= {thresh:.3g}; cannot define a direction"
        )
    coef = _rowdot(v, onto) / sq
    parallel = coef * onto
    return parallel, v - parallel


@dataclass(frozen=True)
class GuidanceDeltas:
    """Unconditional prediction plus the two condition deltas ``eps(c) - eps(null)``."""

    unconditional: np.ndarray
    delta_src: np.ndarray
    delta_tgt: np.ndarray

    def __post_init__(self):
        _check_dims(self.unconditional, self.delta_src, self.delta_tgt)

    @classmethod
    def from_predictions(cls, eps_null, eps_src, eps_tgt):
        eps_null = np.asarray(eps_null, dtype=float)
        return cls(
            eps_null,
            np.asarray(eps_src, dtype=float) - eps_null,
            np.asarray(eps_tgt, dtype=float) - eps_null,
        )


def compose_addition(deltas: GuidanceDeltas, w1: float, w2: float):
    """``w1 * src + w2 * (tgt with its src-parallel part removed)``.

    With ``w2 == 0`` no projection happens, so a vanishing target delta is
    harmless on that path.
    """
    out = w1 * deltas.delta_src
    if w2 == 0:
        return out
    _, tgt_perp = project(deltas.delta_tgt, deltas.delta_src)
    return out + w2 * tgt_perp


def compose_removal(deltas: GuidanceDeltas, w1: float, w2: float):
    """Keep the part of src orthogonal to tgt, subtract ``w2`` times the parallel part."""
    src_par, src_perp = project(deltas.delta_src, deltas.delta_tgt)
    return w1 * src_perp - w2 * src_par


def compose_bayes_addition(deltas: GuidanceDeltas):
    return deltas.unconditional + deltas.delta_src + deltas.delta_tgt


def compose_bayes_removal(deltas: GuidanceDeltas):
    # delta_src holds the joint-condition delta, delta_tgt the removed one
    return deltas.unconditional + deltas.delta_src - deltas.delta_tgt


def assemble_guidance(deltas: GuidanceDeltas, mode, w1: float, w2: float, cfg_scale: float):
    """Full noise estimate: ``eps(null) + cfg_scale * composed_delta``.

    ``(ADDITION, w1=1, w2=0)`` is plain classifier-free guidance.
    """
    mode = ManipulationMode(mode)
    if not (np.isfinite(w1) and np.isfinite(w2)):
        raise ValueError("guidance weights must be finite")
    if not cfg_scale > 0:
        raise ValueError(f"cfg_scale must be > 0, got {cfg_scale}")
    if mode is ManipulationMode.ADDITION:
        composed = compose_addition(deltas, w1, w2)
    else:
        composed = compose_removal(deltas, w1, w2)
    return deltas.unconditional + cfg_scale * composed
