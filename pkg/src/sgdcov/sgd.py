"""Constant-curvature SGD with polynomially decaying steps and online averaging.

The recursion is x_{t+1} = x_t - eta_t (H (x_t - x*) + L_S zeta_t) with
eta_t = eta0 * t^(-alpha) for t >= 1 (eta0 at t = 0) and alpha in (1/2, 1).
The running mean averages iterates 1..t; the initial point is excluded.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .matstat import (
    RngStream,
    as_square_matrix,
    as_vector,
    gaussian_vector,
    operator_norm,
    sym_eigen,
)

Sink = Callable[[int, np.ndarray, float], None]

# Noise eigenvalues this far (relatively) below zero are treated as rounding.
_PSD_SLACK = 1e-10


@dataclass(frozen=True)
class Schedule:
    """Step-size schedule eta_t = eta0 * t^(-alpha), with eta_0 = eta0."""

    eta0: float
    alpha: float

    def __post_init__(self) -> None:
        if not self.eta0 > 0.0:
            raise ValueError("eta0 must be positive")
        if not 0.5 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly between 0.5 and 1")


def stepsize(schedule: Schedule, t: int) -> float:
    """Step size used to move from iterate t to iterate t + 1."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return schedule.eta0
    return schedule.eta0 * float(t) ** (-schedule.alpha)


class QuadraticProblem:
    """Quadratic objective with additive Gaussian gradient noise.

    Parameters
    ----------
    hessian : array_like
        Symmetric positive definite curvature H.
    noise_cov : array_like
        Symmetric positive semidefinite gradient-noise covariance S.
    x_star : array_like, optional
        Minimizer; zero vector by default.
    """

    def __init__(self, hessian, noise_cov, x_star=None):
        self.hessian = as_square_matrix(hessian, name="hessian")
        self.noise_cov = as_square_matrix(noise_cov, name="noise_cov")
        if self.noise_cov.shape != self.hessian.shape:
            raise ValueError("hessian and noise_cov dimensions differ")
        self.d = self.hessian.shape[0]
        if x_star is None:
            self.x_star = np.zeros(self.d)
        else:
            self.x_star = as_vector(x_star, name="x_star")
            if self.x_star.size != self.d:
                raise ValueError("x_star dimension mismatch")

        h_vals, _ = sym_eigen(self.hessian)  # also rejects asymmetric input
        self.mu = float(h_vals[-1])
        if self.mu <= 0.0:
            raise ValueError("hessian must be positive definite")

        s_vals, s_vecs = sym_eigen(self.noise_cov)
        scale = max(float(s_vals[0]), 0.0)
        if float(s_vals[-1]) < -_PSD_SLACK * (1.0 + scale):
            raise ValueError("noise_cov must be positive semidefinite")
        root = np.sqrt(np.maximum(s_vals, 0.0))
        # Symmetric square root; L L^T = S.
        self.noise_factor = (s_vecs * root) @ s_vecs.T

    def gradient(self, x: np.ndarray, zeta: np.ndarray) -> np.ndarray:
        """Stochastic gradient at x given a standard normal draw zeta."""
        return self.hessian @ (x - self.x_star) + self.noise_factor @ zeta


def true_covariance(problem: QuadraticProblem) -> np.ndarray:
    """Limiting covariance H^-1 S H^-1 of the scaled averaged iterate."""
    vals, vecs = sym_eigen(problem.hessian)
    hinv = (vecs / vals) @ vecs.T
    v = hinv @ problem.noise_cov @ hinv
    return (v + v.T) / 2.0


@dataclass
class SgdState:
    """Iteration counter, current iterate, and running mean over iterates 1..t."""

    t: int
    x: np.ndarray
    mean: np.ndarray


def initial_state(problem: QuadraticProblem, x0=None) -> SgdState:
    x = np.zeros(problem.d) if x0 is None else as_vector(x0, name="x0").copy()
    if x.size != problem.d:
        raise ValueError("x0 dimension mismatch")
    return SgdState(t=0, x=x, mean=np.zeros(problem.d))


def sgd_step(
    state: SgdState,
    problem: QuadraticProblem,
    schedule: Schedule,
    stream: RngStream,
) -> SgdState:
    """Advance one step, consuming exactly d normals from the stream."""
    eta = stepsize(schedule, state.t)
    zeta = gaussian_vector(stream, problem.d)
    x_next = state.x - eta * problem.gradient(state.x, zeta)
    t_next = state.t + 1
    mean_next = state.mean + (x_next - state.mean) / t_next
    return SgdState(t=t_next, x=x_next, mean=mean_next)


def check_stepsize_condition(problem: QuadraticProblem, schedule: Schedule) -> None:
    """Warn (never error) when eta0 <= 1/(2 mu); rates degrade but runs stay valid."""
    bound = 1.0 / (2.0 * problem.mu)
    if schedule.eta0 <= bound:
        warnings.warn(
            f"eta0={schedule.eta0:g} is at or below 1/(2*mu)={bound:g}; "
            "averaging rates are not guaranteed",
            RuntimeWarning,
            stacklevel=3,
        )


def run_trajectory(
    problem: QuadraticProblem,
    schedule: Schedule,
    n: int,
    stream: RngStream,
    sinks: Sequence[Sink] | Iterable[Sink] = (),
    x0=None,
) -> SgdState:
    """Run n steps, delivering each (t, x_t, eta_{t-1}) to every sink in order.

    Sinks are read-only observers: a trajectory driven with several sinks
    attached feeds each one the identical iterate stream a solo run would.
    Memory stays O(d) regardless of n; sinks own whatever they retain.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    check_stepsize_condition(problem, schedule)
    sink_list = list(sinks)
    state = initial_state(problem, x0=x0)
    for _ in range(n):
        eta_prev = stepsize(schedule, state.t)
        state = sgd_step(state, problem, schedule, stream)
        for sink in sink_list:
            sink(state.t, state.x, eta_prev)
    return state


def averaging_error(state: SgdState, problem: QuadraticProblem) -> float:
    """Euclidean distance from the running mean to the minimizer."""
    return float(np.linalg.norm(state.mean - problem.x_star))


def covariance_error(estimate: np.ndarray, problem: QuadraticProblem) -> float:
    """Operator-norm distance from an estimate to the true limiting covariance."""
    return operator_norm(estimate - true_covariance(problem))
