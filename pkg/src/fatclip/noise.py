"""Fat-tailed noise: symmetric alpha-stable sampling and tail-index estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ParamVector, RngLike, as_generator

FAMILIES = ("gaussian", "cauchy", "alpha_stable", "pareto_symmetric", "none")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-coordinate noise law.

    ``scale`` follows the stable convention: ``alpha=2`` is Normal with
    variance ``2 * scale**2`` and ``alpha=1`` is Cauchy with that scale.
    """

    family: str = "none"
    alpha: float = 2.0
    scale: float = 1.0
    location: float = 0.0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {FAMILIES}")
        alpha = float(self.alpha)
        if self.family == "gaussian":
            if alpha != 2.0:
                raise ValueError("gaussian noise requires alpha == 2")
        elif self.family == "cauchy":
            if alpha != 1.0:
                raise ValueError("cauchy noise requires alpha == 1")
        if not 0.0 < alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not math.isfinite(self.location):
            raise ValueError("location must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "location", float(self.location))

    @classmethod
    def gaussian(cls, scale: float = 1.0) -> "NoiseSpec":
        return cls("gaussian", 2.0, scale)

    @classmethod
    def cauchy(cls, scale: float = 1.0) -> "NoiseSpec":
        return cls("cauchy", 1.0, scale)

    @classmethod
    def stable(cls, alpha: float, scale: float = 1.0) -> "NoiseSpec":
        return cls("alpha_stable", alpha, scale)


@dataclass(frozen=True)
class TailEstimate:
    alpha_hat: float
    n_samples: int
    block_size: int
    block_count: int


def _check_sas_params(alpha: float, sigma: float) -> None:
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def sas_array(alpha: float, sigma: float, size, rng: RngLike) -> np.ndarray:
    """Draw symmetric alpha-stable variates by the Chambers-Mallows-Stuck transform.

    ``V ~ U(-pi/2, pi/2)`` and ``W ~ Exp(1)``; alpha == 1 and alpha == 2 use
    their closed forms (tan V and 2 sqrt(W) sin V).
    """
    _check_sas_params(alpha, sigma)
    gen = as_generator(rng)
    v = (gen.random(size) - 0.5) * math.pi
    if alpha == 1.0:
        return sigma * np.tan(v)
    w = gen.standard_exponential(size)
    if alpha == 2.0:
        return (2.0 * sigma) * np.sqrt(w) * np.sin(v)
    inv = 1.0 / alpha
    return sigma * (
        np.sin(alpha * v)
        / np.cos(v) ** inv
        * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) * inv)
    )


def sample_sas(alpha: float, sigma: float, rng: RngLike) -> float:
    return float(sas_array(alpha, sigma, 1, rng)[0])


def sample_noise_vector(spec: NoiseSpec, d: int, rng: RngLike) -> ParamVector:
    """``d`` i.i.d. coordinates from ``spec``; the ``none`` family gives zeros."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    family = spec.family
    if family == "none":
        return np.zeros(d)
    if family == "pareto_symmetric":
        gen = as_generator(rng)
        # |X| = scale * U^(-1/alpha): Pareto type I tail P(|X| > x) = (scale/x)^alpha
        u = 1.0 - gen.random(d)
        sign = np.where(gen.random(d) < 0.5, -1.0, 1.0)
        out = sign * spec.scale * u ** (-1.0 / spec.alpha)
    else:
        out = sas_array(spec.alpha, spec.scale, d, rng)
    if spec.location != 0.0:
        out = out + spec.location
    return out


def estimate_tail_index(samples: Sequence[float] | np.ndarray, block_count: int | None = None) -> TailEstimate:
    """Block (double-log) estimator of the stable tail-index.

    The first ``K1 * K2`` samples are split into ``K1`` blocks of ``K2``
    consecutive values with block sums ``Y_i``, and

        1/alpha = (mean_i log|Y_i| - mean_j log|X_j|) / log K2.

    ``block_count`` defaults to ``floor(sqrt(N))``.  Exact zeros carry no
    scale information and are left out of the log averages.  The result is
    clamped to (0, 2].
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    k1 = int(math.isqrt(n)) if block_count is None else int(block_count)
    if k1 < 1:
        raise ValueError("block_count must be >= 1")
    if n < k1 * k1 or n < 4:
        raise ValueError(f"insufficient samples: {n} < block_count**2 = {k1 * k1}")
    k2 = n // k1
    if k2 < 2:
        raise ValueError("insufficient samples: blocks need at least 2 values")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    x = x[: k1 * k2]
    absx = np.abs(x)
    if not np.any(absx > 0):
        raise ValueError("all samples are zero; tail-index undefined")
    absy = np.abs(x.reshape(k1, k2).sum(axis=1))
    if not np.any(absy > 0):
        raise ValueError("all block sums are zero; tail-index undefined")
    mean_log_x = float(np.mean(np.log(absx[absx > 0])))
    mean_log_y = float(np.mean(np.log(absy[absy > 0])))
    inv_alpha = (mean_log_y - mean_log_x) / math.log(k2)
    alpha_hat = 2.0 if inv_alpha <= 0.5 else 1.0 / inv_alpha
    return TailEstimate(alpha_hat=alpha_hat, n_samples=k1 * k2, block_size=k2, block_count=k1)


def empirical_alpha_moment(samples: Sequence[ParamVector], alpha: float) -> float:
    """Mean of ``||v||**alpha``; an empirical stand-in for ``G**alpha``."""
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    norms = np.array([np.linalg.norm(np.asarray(v, dtype=np.float64)) for v in samples])
    return float(np.mean(norms**alpha))
