"""Analysis of trajectories: failure detection, success rates, noise statistics, rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ParamVector
from .engine import Trajectory
from .objectives import quad_loss


@dataclass(frozen=True)
class FailurePolicy:
    """When a run counts as a catastrophic failure.

    A round fails if its loss is non-finite (``nonfinite_fails``), if the loss
    exceeds ``loss_blowup_factor`` times the initial loss, or if accuracy falls
    more than ``accuracy_drop`` (relative) below its running maximum once
    ``min_rounds_observed`` rounds have been seen.  Diverged rounds always fail.
    """

    nonfinite_fails: bool = True
    loss_blowup_factor: float = 10.0
    accuracy_drop: float = 0.5
    min_rounds_observed: int = 5

    def __post_init__(self) -> None:
        if not self.loss_blowup_factor > 1:
            raise ValueError("loss_blowup_factor must be > 1")
        if not 0 < self.accuracy_drop < 1:
            raise ValueError("accuracy_drop must lie in (0, 1)")
        if self.min_rounds_observed < 0:
            raise ValueError("min_rounds_observed must be >= 0")


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, float], ...]


def detect_failure_series(
    losses: Sequence[float],
    accuracies: Sequence[float] | None = None,
    diverged: Sequence[bool] | None = None,
    initial_loss: float | None = None,
    policy: FailurePolicy = FailurePolicy(),
) -> tuple[bool, int | None]:
    """Core of :func:`detect_failure` on plain per-round series (rounds numbered from 1).

    ``initial_loss`` defaults to the first loss; a non-positive reference
    disables the blow-up test.
    """
    if len(losses) == 0:
        raise ValueError("empty trajectory")
    ref = losses[0] if initial_loss is None else initial_loss
    threshold = policy.loss_blowup_factor * ref if (math.isfinite(ref) and ref > 0) else math.inf
    best_acc = -math.inf
    for r, loss in enumerate(losses, start=1):
        if diverged is not None and diverged[r - 1]:
            return True, r
        if not math.isfinite(loss):
            if policy.nonfinite_fails:
                return True, r
            continue
        if loss > threshold:
            return True, r
        if accuracies is not None:
            acc = accuracies[r - 1]
            if math.isfinite(acc):
                if r > policy.min_rounds_observed and best_acc > 0:
                    if (best_acc - acc) / best_acc > policy.accuracy_drop:
                        return True, r
                best_acc = max(best_acc, acc)
    return False, None


def detect_failure(trajectory: Trajectory, policy: FailurePolicy = FailurePolicy()) -> tuple[bool, int | None]:
    recs = trajectory.records
    return detect_failure_series(
        [r.global_loss for r in recs],
        [r.accuracy for r in recs],
        [r.diverged for r in recs],
        trajectory.initial_loss,
        policy,
    )


def success_rate(trajectories: Sequence[Trajectory], policy: FailurePolicy = FailurePolicy()) -> float:
    if len(trajectories) == 0:
        raise ValueError("no trajectories")
    clean = sum(not detect_failure(tr, policy)[0] for tr in trajectories)
    return clean / len(trajectories)


def pseudo_gradient_noise_norms(deltas: Sequence[ParamVector]) -> list[float]:
    """Norm of each client's delta after removing the cross-client mean."""
    if len(deltas) < 2:
        raise ValueError("need deltas from at least 2 clients")
    stack = np.vstack([np.asarray(d, dtype=np.float64) for d in deltas])
    centred = stack - stack.mean(axis=0)
    return [float(v) for v in np.sqrt(np.einsum("ij,ij->i", centred, centred))]


def empirical_variance(samples: Sequence[ParamVector] | np.ndarray) -> float:
    """Mean squared distance of gradient samples (taken at one point) from their mean."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    centred = arr - arr.mean(axis=0)
    return float(np.mean(np.sum(centred * centred, axis=1)))


def fit_rate_exponent(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through ``(log x, log y)``."""
    if len(points) < 3:
        raise ValueError("need at least 3 points")
    xs = np.array([p[0] for p in points], dtype=np.float64)
    ys = np.array([p[1] for p in points], dtype=np.float64)
    if not (np.all(xs > 0) and np.all(ys > 0)):
        raise ValueError("rate fit needs strictly positive values")
    lx, ly = np.log(xs), np.log(ys)
    if np.ptp(lx) == 0:
        raise ValueError("rate fit needs at least two distinct x values")
    mx, my = lx.mean(), ly.mean()
    slope = float(np.sum((lx - mx) * (ly - my)) / np.sum((lx - mx) ** 2))
    intercept = float(my - slope * mx)
    ss_res = float(np.sum((ly - (intercept + slope * lx)) ** 2))
    ss_tot = float(np.sum((ly - my) ** 2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(slope, intercept, r2, tuple(zip(lx.tolist(), ly.tolist())))


def final_error(trajectory: Trajectory) -> float:
    """Error measure used by sweeps.

    Strongly convex runs (``mu > 0``) report the optimality gap at the
    weighted output for the quadratic and the global loss there otherwise;
    non-convex runs report the smallest squared global gradient norm seen.
    """
    cfg = trajectory.config
    if trajectory.weighted_output is not None and cfg.objective.kind == "quadratic":
        return quad_loss(trajectory.weighted_output)
    if not trajectory.records:
        return math.nan
    if cfg.mu > 0:
        return trajectory.records[-1].global_loss
    return min(r.global_grad_norm**2 for r in trajectory.records)


def round_noise_norms(trajectory: Trajectory) -> list[float]:
    """All pseudo-gradient noise norms recorded over the run."""
    out: list[float] = []
    for rec in trajectory.records:
        out.extend(rec.noise_norms)
    return out
