"""Confidence ellipsoids from averaged iterates and coverage experiments.

The ellipsoid { x : n (xbar - x)^T Sigma_hat^{-1} (xbar - x) <= chi2 } is
asymptotically level-calibrated when Sigma_hat is consistent for the limiting
covariance of the averaged iterate.  Near-singular shapes are inverted with
the shared eigenvalue-floor policy and flagged, so coverage can be reported
with and without the affected replications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import EstimatorSpec, run_chunk
from .matstat import as_square_matrix, as_vector, chi2_quantile, spd_inverse
from .sgd import QuadraticProblem, Schedule

_CHUNK = 64
_SYM_TOL = 1e-8


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray
    shape: np.ndarray
    n: int
    level: float
    radius_sq: float


@dataclass(frozen=True)
class CoverResult:
    covered: bool
    degenerate: bool


def build_ellipsoid(mean, sigma_hat, n: int, level: float) -> Ellipsoid:
    """Confidence ellipsoid for the minimizer at the given level."""
    center = as_vector(mean, "mean")
    shape = as_square_matrix(sigma_hat, "sigma_hat")
    if shape.shape[0] != center.size:
        raise ValueError("mean and sigma_hat dimensions differ")
    scale = float(np.max(np.abs(shape))) or 1.0
    if float(np.max(np.abs(shape - shape.T))) > _SYM_TOL * scale:
        raise ValueError("sigma_hat must be symmetric")
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    radius_sq = chi2_quantile(center.size, level)
    return Ellipsoid(center=center, shape=shape, n=n, level=level, radius_sq=radius_sq)


def mahalanobis(ellipsoid: Ellipsoid, point) -> tuple[float, bool]:
    """Scaled quadratic form n (c - p)^T shape^{-1} (c - p) and the floor flag."""
    p = as_vector(point, "point")
    inv, floored = spd_inverse(ellipsoid.shape)
    diff = ellipsoid.center - p
    quad = float(ellipsoid.n * diff @ inv @ diff)
    return quad, floored > 0


def covers(ellipsoid: Ellipsoid, point) -> CoverResult:
    """Closed-ellipsoid membership; degenerate when the shape needed flooring."""
    quad, degenerate = mahalanobis(ellipsoid, point)
    return CoverResult(covered=quad <= ellipsoid.radius_sq, degenerate=degenerate)


@dataclass(frozen=True)
class CoverageResult:
    """Empirical coverage of the target point across replications.

    fraction counts failed (degenerate) replications as misses;
    fraction_nondegenerate excludes them (NaN when none survive).
    """

    fraction: float
    se: float
    fraction_nondegenerate: float
    degenerate_count: int
    reps: int
    level: float
    covered: np.ndarray
    degenerate: np.ndarray


def coverage_experiment(
    problem: QuadraticProblem,
    schedule: Schedule,
    estimator: EstimatorSpec,
    n: int,
    reps: int,
    level: float,
    base_seed: int,
    x0=None,
) -> CoverageResult:
    """Monte Carlo coverage of the minimizer by the estimator's ellipsoid.

    Each replication runs its own trajectory (stream id = replication
    index), builds the ellipsoid from that replication's averaged iterate
    and covariance estimate, and records whether it covers the minimizer.
    A replication whose estimator fails, or whose shape inversion needed
    the eigenvalue floor, is marked degenerate and kept in the record.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    covered = np.zeros(reps, dtype=bool)
    degenerate = np.zeros(reps, dtype=bool)
    for start in range(0, reps, _CHUNK):
        stop = min(start + _CHUNK, reps)
        result = run_chunk(
            problem,
            schedule,
            base_seed,
            range(start, stop),
            (n,),
            (estimator,),
            x0=x0,
        )
        means = result.means[n]
        estimates = result.estimates[(n, estimator.label)]
        failed = result.degenerate[(n, estimator.label)]
        for r in range(stop - start):
            if failed[r]:
                degenerate[start + r] = True
                continue
            ellipsoid = build_ellipsoid(means[r], estimates[r], n, level)
            res = covers(ellipsoid, problem.x_star)
            covered[start + r] = res.covered
            degenerate[start + r] = res.degenerate
    fraction = float(np.mean(covered))
    se = math.sqrt(fraction * (1.0 - fraction) / reps)
    keep = ~degenerate
    fraction_nd = float(np.mean(covered[keep])) if keep.any() else float("nan")
    return CoverageResult(
        fraction=fraction,
        se=se,
        fraction_nondegenerate=fraction_nd,
        degenerate_count=int(degenerate.sum()),
        reps=reps,
        level=level,
        covered=covered,
        degenerate=degenerate,
    )
