from __future__ import annotations

import numpy as np
import pytest

from sgdcov.engine import EstimatorSpec
from sgdcov.inference import (
    Ellipsoid,
    build_ellipsoid,
    coverage_experiment,
    covers,
    mahalanobis,
)
from sgdcov.sgd import QuadraticProblem, Schedule


def test_build_ellipsoid_radius_matches_quantile_anchor() -> None:
    e = build_ellipsoid(np.zeros(2), np.eye(2), n=100, level=0.95)
    assert e.radius_sq == pytest.approx(5.991464547107979, abs=1e-8)
    assert e.n == 100 and e.level == 0.95


def test_radius_grows_with_level() -> None:
    levels = [0.5, 0.8, 0.9, 0.95, 0.99, 0.999]
    radii = [build_ellipsoid(np.zeros(3), np.eye(3), 10, lv).radius_sq for lv in levels]
    assert all(a < b for a, b in zip(radii, radii[1:]))


def test_build_ellipsoid_validates_inputs() -> None:
    with pytest.raises(ValueError):
        build_ellipsoid(np.zeros(2), np.eye(2), n=100, level=0.0)
    with pytest.raises(ValueError):
        build_ellipsoid(np.zeros(2), np.eye(2), n=100, level=1.0)
    with pytest.raises(ValueError):
        build_ellipsoid(np.zeros(2), np.eye(2), n=0, level=0.9)
    with pytest.raises(ValueError):
        build_ellipsoid(np.zeros(2), [[1.0, 2.0], [0.0, 1.0]], n=5, level=0.9)


def test_unit_ball_membership() -> None:
    e = Ellipsoid(center=np.zeros(2), shape=np.eye(2), n=1, level=0.5, radius_sq=1.0)
    assert covers(e, np.zeros(2)).covered
    assert covers(e, np.array([1.0, 0.0])).covered  # boundary is inside
    assert not covers(e, np.array([2.0, 0.0])).covered
    assert not covers(e, np.array([0.8, 0.8])).covered


def test_covers_scales_with_n() -> None:
    # Larger n shrinks the ellipsoid around the center.
    point = np.array([0.5, 0.0])
    small_n = build_ellipsoid(np.zeros(2), np.eye(2), n=4, level=0.95)
    large_n = build_ellipsoid(np.zeros(2), np.eye(2), n=400, level=0.95)
    assert covers(small_n, point).covered
    assert not covers(large_n, point).covered


def test_quadratic_form_invariant_under_congruence() -> None:
    rng = np.random.default_rng(3)
    d = 4
    a = rng.standard_normal((d, d))
    sigma = a @ a.T + 0.5 * np.eye(d)
    center = rng.standard_normal(d)
    point = rng.standard_normal(d)
    e = build_ellipsoid(center, sigma, n=50, level=0.9)
    q0, _ = mahalanobis(e, point)
    t = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
    e2 = build_ellipsoid(t @ center, t @ sigma @ t.T, n=50, level=0.9)
    q1, _ = mahalanobis(e2, t @ point)
    assert q1 == pytest.approx(q0, rel=1e-9)


def test_degenerate_shape_is_flagged() -> None:
    e = build_ellipsoid(np.zeros(2), np.diag([1.0, 1e-30]), n=10, level=0.9)
    res = covers(e, np.array([0.0, 1e-6]))
    assert res.degenerate


def test_coverage_monotone_in_level() -> None:
    rng = np.random.default_rng(11)
    d = 3
    sigma = np.eye(d)
    points = rng.standard_normal((200, d))
    counts = []
    for level in (0.5, 0.8, 0.95):
        e = build_ellipsoid(np.zeros(d), sigma, n=1, level=level)
        counts.append(sum(covers(e, p).covered for p in points))
    assert counts[0] <= counts[1] <= counts[2]


def _problem() -> tuple[QuadraticProblem, Schedule]:
    return (
        QuadraticProblem(np.diag([1.0, 2.0]), np.eye(2)),
        Schedule(eta0=1.0, alpha=0.55),
    )


def test_oracle_coverage_calibrated_at_median_level() -> None:
    problem, schedule = _problem()
    spec = EstimatorSpec("oracle", "oracle")
    result = coverage_experiment(
        problem, schedule, spec, n=2000, reps=200, level=0.5, base_seed=17
    )
    se = max(result.se, 1e-12)
    assert abs(result.fraction - 0.5) < 3.0 * se + 1e-12
    assert result.degenerate_count == 0


def test_coverage_experiment_deterministic() -> None:
    problem, schedule = _problem()
    spec = EstimatorSpec("oracle", "oracle")
    a = coverage_experiment(problem, schedule, spec, n=500, reps=60, level=0.9, base_seed=2)
    b = coverage_experiment(problem, schedule, spec, n=500, reps=60, level=0.9, base_seed=2)
    assert a.fraction == b.fraction
    np.testing.assert_array_equal(a.covered, b.covered)


def test_failed_replications_are_recorded_not_dropped() -> None:
    problem = QuadraticProblem(np.eye(4), np.eye(4))
    schedule = Schedule(eta0=1.0, alpha=0.6)
    spec = EstimatorSpec("regression", "regression")
    # 3 iterates give 2 pairs: under-identified, so every replication fails.
    result = coverage_experiment(problem, schedule, spec, n=3, reps=5, level=0.9, base_seed=0)
    assert result.degenerate_count == 5
    assert result.reps == 5
    assert result.fraction == 0.0
    assert np.isnan(result.fraction_nondegenerate)


def test_coverage_requires_positive_reps() -> None:
    problem, schedule = _problem()
    with pytest.raises(ValueError):
        coverage_experiment(
            problem, schedule, EstimatorSpec("oracle", "oracle"), 100, 0, 0.9, 1
        )
