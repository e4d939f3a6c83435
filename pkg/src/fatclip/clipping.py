"""Norm clipping ``min{1, lambda/||v||} * v``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ParamVector, vec_norm


@dataclass(frozen=True)
class ClipReport:
    output: ParamVector
    was_clipped: bool
    input_norm: float


def clip(v: ParamVector, lam: float) -> ClipReport:
    """Rescale ``v`` onto the ball of radius ``lam`` if it lies outside.

    Vectors inside the ball (including zero) are returned unchanged, not
    multiplied by 1.0, so an inactive clip is bit-exact.  Non-finite input
    raises instead of producing a NaN direction.
    """
    if not lam > 0.0:
        raise ValueError(f"clipping threshold must be positive, got {lam}")
    v = np.asarray(v, dtype=np.float64)
    norm = vec_norm(v)
    if not math.isfinite(norm):
        raise ValueError("cannot clip a vector with non-finite norm")
    if norm <= lam:
        return ClipReport(v.copy(), False, norm)
    factor = lam / norm
    out = v * factor
    # rounding can leave ||out|| an ulp above lam; clip(clip(v)) must be a no-op
    while vec_norm(out) > lam:
        factor = math.nextafter(factor, 0.0)
        out = v * factor
    return ClipReport(out, True, norm)
