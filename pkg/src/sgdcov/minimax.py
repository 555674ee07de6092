"""Two-point lower-bound laboratory for averaged SGD.

The construction compares the identity Hessian against a rank-two
perturbation I + delta*A and tracks three quantities: how far apart the
two limiting covariances are (separation), how hard the two trajectory
laws are to distinguish (KL divergence and the total-variation envelope
derived from it), and the resulting two-point risk floor.  Everything is
computed in closed form where the dynamics allow it; a Monte Carlo
estimator is included as an independent check on the recursion.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .matstat import RngStream, as_vector, operator_norm, sym_eigen
from .sgd import Schedule, stepsize

_UNIT_NORM_TOL = 1e-10
_LOWER_BOUND_LIMIT = 1.0 / 12.0
_MC_CHUNK = 512


def swap_matrix(dimension: int) -> np.ndarray:
    """Unit-operator-norm direction that swaps the first two coordinates."""
    if dimension < 2:
        raise ValueError("swap matrix needs dimension >= 2")
    a = np.zeros((dimension, dimension))
    a[0, 1] = 1.0
    a[1, 0] = 1.0
    return a


@dataclass(frozen=True)
class TwoPointConfig:
    """Problem pair description for the lower-bound construction.

    ``delta`` may be left as None when the perturbation size is to be
    chosen by :func:`calibrate_delta`.
    """

    dimension: int
    schedule: Schedule
    n: int
    delta: float | None = None
    matrix: np.ndarray | None = None
    x0: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.dimension < 2:
            raise ValueError("two-point construction needs dimension >= 2")
        if self.n < 0:
            raise ValueError("horizon must be nonnegative")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie strictly between 0 and 1")
        if self.matrix is None:
            object.__setattr__(self, "matrix", swap_matrix(self.dimension))
        else:
            m = np.array(self.matrix, dtype=float)
            if m.shape != (self.dimension, self.dimension):
                raise ValueError("perturbation direction has the wrong shape")
            if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
                raise ValueError("perturbation direction must be symmetric")
            if abs(operator_norm(m) - 1.0) > _UNIT_NORM_TOL:
                raise ValueError("perturbation direction must have unit operator norm")
            object.__setattr__(self, "matrix", m)
        if self.x0 is None:
            object.__setattr__(self, "x0", np.zeros(self.dimension))
        else:
            object.__setattr__(self, "x0", as_vector(self.x0, "x0").copy())
            if self.x0.shape != (self.dimension,):
                raise ValueError("x0 has the wrong length")


@dataclass(frozen=True)
class Separation:
    exact: float
    lower: float
    lower_valid: bool


def separation(config: TwoPointConfig) -> Separation:
    """Operator-norm gap between the two limiting covariances.

    The null covariance is the identity and the alternative is
    (I + delta*A)^-2, so the gap is max_i |1 - (1 + delta*a_i)^-2| over
    the eigenvalues a_i of A.  The quadratic lower bound 2*delta -
    12*delta^2 is only certified for delta <= 1/12, which the flag records.
    """
    if config.delta is None:
        raise ValueError("separation needs delta; calibrate first")
    delta = config.delta
    eigvals, _ = sym_eigen(config.matrix)
    exact = float(max(abs(1.0 - (1.0 + delta * a) ** -2) for a in eigvals))
    lower = 2.0 * delta - 12.0 * delta * delta
    return Separation(exact=exact, lower=lower, lower_valid=delta <= _LOWER_BOUND_LIMIT + 1e-15)


def _collect(config: TwoPointConfig, horizons: tuple[int, ...]) -> list[float]:
    """Partial sums of E||A x_t||^2 under the null dynamics.

    Under H = I the mean and the per-coordinate fluctuation variance
    decouple: m_{t+1} = (1 - eta_t) m_t and c_{t+1} = (1 - eta_t)^2 c_t
    + eta_t^2, so each horizon's sum of ||A m_t||^2 + c_t ||A||_F^2
    comes out of a single forward pass.
    """
    if any(h < 0 for h in horizons):
        raise ValueError("horizons must be nonnegative")
    order = sorted(set(horizons))
    a = config.matrix
    fro2 = float(np.sum(a * a))
    m = config.x0.copy()
    track_mean = bool(np.any(m != 0.0))
    c = 0.0
    total = 0.0
    reached: dict[int, float] = {}
    idx = 0
    t = 0
    last = order[-1] if order else 0
    while idx < len(order) and order[idx] == 0:
        reached[0] = 0.0
        idx += 1
    while t < last:
        term = c * fro2
        if track_mean:
            am = a @ m
            term += float(am @ am)
        total += term
        eta = stepsize(config.schedule, t)
        decay = 1.0 - eta
        c = decay * decay * c + eta * eta
        if track_mean:
            m = m * decay
        t += 1
        while idx < len(order) and order[idx] == t:
            reached[t] = total
            idx += 1
    return [reached[h] for h in horizons]


def kl_exact(config: TwoPointConfig) -> float:
    """Closed-form KL divergence between the two trajectory laws.

    KL = (delta^2 / 2) * sum_{t<n} E||A x_t||^2, evaluated under the null.
    """
    if config.delta is None:
        raise ValueError("kl_exact needs delta; calibrate first")
    (weighted,) = _collect(config, (config.n,))
    return 0.5 * config.delta * config.delta * weighted


def kl_curve(config: TwoPointConfig, horizons: tuple[int, ...] | list[int]) -> list[float]:
    """KL at several horizons from one forward pass over the recursion."""
    if config.delta is None:
        raise ValueError("kl_curve needs delta; calibrate first")
    scale = 0.5 * config.delta * config.delta
    return [scale * s for s in _collect(config, tuple(horizons))]


def kl_monte_carlo(
    config: TwoPointConfig, reps: int, base_seed: int
) -> tuple[float, float]:
    """Monte Carlo estimate of the KL divergence with its standard error.

    Simulates the null dynamics x_{t+1} = (1 - eta_t) x_t - eta_t zeta_t
    with one reproducible stream per replication and averages the
    per-trajectory statistic sum_t ||A x_t||^2.
    """
    if config.delta is None:
        raise ValueError("kl_monte_carlo needs delta; calibrate first")
    if reps < 2:
        raise ValueError("need at least two replications for a standard error")
    if config.n == 0:
        return 0.0, 0.0
    a = config.matrix
    d = config.dimension
    n = config.n
    etas = np.array([stepsize(config.schedule, t) for t in range(n)])
    stats = np.empty(reps)
    for start in range(0, reps, _MC_CHUNK):
        stop = min(start + _MC_CHUNK, reps)
        block = stop - start
        noise = np.empty((block, n, d))
        for r in range(start, stop):
            noise[r - start] = RngStream(base_seed, r).normals((n, d))
        x = np.tile(config.x0, (block, 1))
        acc = np.zeros(block)
        for t in range(n):
            ax = x @ a
            acc += np.einsum("ij,ij->i", ax, ax)
            x = (1.0 - etas[t]) * x - etas[t] * noise[:, t, :]
        stats[start:stop] = acc
    scale = 0.5 * config.delta * config.delta
    mean = float(np.mean(stats))
    sd = float(np.std(stats, ddof=1))
    return scale * mean, scale * sd / math.sqrt(reps)


def delta_for(kappa_hat: float, n: int, alpha: float, tv_target: float = 0.25) -> float:
    """Perturbation size hitting ``tv_target`` for a given KL growth constant."""
    if kappa_hat <= 0.0:
        raise ValueError("kappa_hat must be positive")
    if n < 1:
        raise ValueError("horizon must be positive")
    return tv_target * math.sqrt(2.0 / (kappa_hat * n ** (1.0 - alpha)))


def calibrate_delta(
    config: TwoPointConfig, tv_target: float = 0.25
) -> tuple[float, float]:
    """Choose delta so the total-variation envelope equals ``tv_target``.

    Returns (kappa_hat, delta_n) where kappa_hat is the measured constant
    in KL = (kappa_hat / 2) * delta^2 * n^(1-alpha).  By construction the
    exact KL at delta_n equals tv_target^2 and sqrt(KL) equals tv_target.
    """
    if not 0.0 < tv_target <= 1.0:
        raise ValueError("tv_target must lie in (0, 1]")
    (weighted,) = _collect(config, (config.n,))
    if weighted <= 0.0:
        raise ValueError("horizon too short to calibrate")
    alpha = config.schedule.alpha
    kappa_hat = weighted / config.n ** (1.0 - alpha)
    delta_n = delta_for(kappa_hat, config.n, alpha, tv_target)
    return kappa_hat, delta_n


def tv_envelope(kl: float) -> float:
    """Upper bound on total variation implied by a KL divergence."""
    if kl < 0.0:
        raise ValueError("KL divergence cannot be negative")
    return min(1.0, math.sqrt(kl))


def lecam_floor(separation_value: float, tv: float) -> float:
    """Two-point risk floor: half the separation times (1 - TV)."""
    if not 0.0 <= tv <= 1.0:
        raise ValueError("total variation must lie in [0, 1]")
    if separation_value < 0.0:
        raise ValueError("separation must be nonnegative")
    return 0.5 * separation_value * (1.0 - tv)


@dataclass(frozen=True)
class TwoPointReport:
    delta: float
    kappa_hat: float
    delta_n: float
    separation_exact: float
    separation_lower: float
    separation_lower_valid: bool
    kl_exact: float
    tv_bound: float
    risk_floor: float
    kl_mc: float | None = None
    kl_mc_se: float | None = None


def build_report(
    config: TwoPointConfig, mc_reps: int = 0, base_seed: int = 0
) -> TwoPointReport:
    """Evaluate the whole construction at one horizon.

    When the config carries no delta the calibrated delta_n is used.  The
    risk floor uses the plain >= delta separation guarantee, which gives
    (3/8) * delta_n at the calibrated size.
    """
    kappa_hat, delta_n = calibrate_delta(
        dataclasses.replace(config, delta=None) if config.delta is not None else config
    )
    used = config if config.delta is not None else dataclasses.replace(config, delta=delta_n)
    sep = separation(used)
    kl = kl_exact(used)
    tv = tv_envelope(kl)
    floor = lecam_floor(used.delta, tv)
    mc_val: float | None = None
    mc_se: float | None = None
    if mc_reps > 0:
        mc_val, mc_se = kl_monte_carlo(used, mc_reps, base_seed)
    return TwoPointReport(
        delta=used.delta,
        kappa_hat=kappa_hat,
        delta_n=delta_n,
        separation_exact=sep.exact,
        separation_lower=sep.lower,
        separation_lower_valid=sep.lower_valid,
        kl_exact=kl,
        tv_bound=tv,
        risk_floor=floor,
        kl_mc=mc_val,
        kl_mc_se=mc_se,
    )
